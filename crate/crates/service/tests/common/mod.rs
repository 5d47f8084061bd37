//! Fixtures for driving the router in-process. Shared with the acceptance
//! target.
#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{GrayImage, ImageFormat, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;
use xraydx_core::model::{MiniDenseNet, ModelSpec};
use xraydx_service::{router, AppState, LoadedModel, ServiceConfig, SCHEMA};

pub const BOUNDARY: &str = "xraydx-test-boundary";

pub fn chest_model(seed: u64) -> LoadedModel {
    LoadedModel::new(MiniDenseNet::chest(ModelSpec::desk(14), seed).unwrap(), format!("test-{seed}"))
}

pub fn app_with(config: ServiceConfig, model: Option<LoadedModel>) -> Router {
    let state = match model {
        Some(m) => AppState::with_model(config, m),
        None => AppState::new(config),
    };
    router(Arc::clone(&state))
}

pub fn app() -> Router {
    app_with(ServiceConfig::default(), Some(chest_model(1)))
}

pub fn png(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Vec<u8> {
    let img = GrayImage::from_fn(width, height, |x, y| Luma([f(x, y)]));
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).unwrap();
    buf.into_inner()
}

pub fn multipart_body(field: &str, bytes: &[u8]) -> Vec<u8> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"upload.png\"\r\nContent-Type: application/octet-stream\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn post(uri: &str, content_type: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri).header("content-type", content_type).body(Body::from(body)).unwrap()
}

pub fn upload(uri: &str, bytes: &[u8]) -> Request<Body> {
    post(uri, &format!("multipart/form-data; boundary={BOUNDARY}"), multipart_body("image", bytes))
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {:?}", String::from_utf8_lossy(&self.body)))
    }

    pub fn content_type(&self) -> &str {
        self.headers.get("content-type").and_then(|v| v.to_str().ok()).unwrap_or("")
    }
}

pub async fn call(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = res.into_parts();
    let body = body.collect().await.unwrap().to_bytes().to_vec();
    Reply { status: parts.status, headers: parts.headers, body }
}

/// Validate `value` against `#/$defs/<def>` of the contract file.
pub fn check_schema(def: &str, value: &Value) -> Result<(), String> {
    let mut schema: Value = serde_json::from_str(SCHEMA).unwrap();
    schema["$ref"] = Value::String(format!("#/$defs/{def}"));
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    if errors.is_empty() { Ok(()) } else { Err(errors.join("; ")) }
}

/// The response body with its timing field removed.
pub fn without_elapsed(body: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(body).unwrap();
    if let Some(o) = v.as_object_mut() {
        o.remove("elapsed_ms");
    }
    v
}

/// `n` hostile `/predict` requests: raw noise under assorted content types,
/// noise and truncated images inside well-formed multipart bodies, and
/// mangled multipart framing.
pub fn fuzz_requests(seed: u64, n: usize) -> Vec<Request<Body>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let good = png(40, 30, |x, y| ((x * 5 + y * 3) % 256) as u8);
    (0..n)
        .map(|i| {
            let len = rng.random_range(0..2048);
            let noise: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            match i % 6 {
                0 => post("/predict", "application/octet-stream", noise),
                1 => post("/predict", &format!("multipart/form-data; boundary={BOUNDARY}"), noise),
                2 => upload("/predict", &noise),
                3 => {
                    // a real PNG cut short or with bytes flipped
                    let mut img = good.clone();
                    let cut = rng.random_range(0..img.len());
                    if rng.random::<bool>() {
                        img.truncate(cut);
                    } else {
                        img[cut] ^= rng.random_range(1..=255u8);
                    }
                    upload("/predict", &img)
                }
                4 => {
                    let mut body = multipart_body("image", &noise);
                    let cut = rng.random_range(0..body.len());
                    body.truncate(cut);
                    post("/predict", &format!("multipart/form-data; boundary={BOUNDARY}"), body)
                }
                _ => {
                    let field = if rng.random::<bool>() { "other" } else { "image" };
                    let ct = ["text/plain", "multipart/form-data", "multipart/form-data; boundary=", "application/json"]
                        [rng.random_range(0..4)];
                    let body = multipart_body(field, &noise);
                    if field == "other" {
                        upload_raw(body)
                    } else {
                        post("/predict", ct, body)
                    }
                }
            }
        })
        .collect()
}

fn upload_raw(body: Vec<u8>) -> Request<Body> {
    post("/predict", &format!("multipart/form-data; boundary={BOUNDARY}"), body)
}
