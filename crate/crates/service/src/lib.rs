//! HTTP inference service over a trained MiniDenseNet.
//!
//! Routes: `POST /predict`, `POST /gradcam?class=NAME`, `GET /health`,
//! `GET /labels`, `GET /examples`, `GET /examples/{name}`,
//! `GET /api/schema.json`, plus the web client under `/` and `/static/`.
//! Every error is JSON carrying a machine-readable `code`.

mod config;
mod error;
mod inference;

pub use config::{ConfigError, ServiceConfig};
pub use error::ApiError;
pub use inference::{decode, LabelScore, LoadedModel};

use std::collections::HashMap;
use std::future::{Future, IntoFuture};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

/// The request/response contract, also served at `/api/schema.json`.
pub const SCHEMA: &str = include_str!("../schema/api.schema.json");

/// Served at `/` when no web client bundle is configured.
const PLACEHOLDER_INDEX: &str = "<!doctype html><title>xraydx</title><p>No web client configured \
(set <code>static_dir</code>). API: POST /predict, POST /gradcam?class=NAME, GET /health, GET /labels, \
GET /examples, GET /api/schema.json.</p>";

const IMAGE_FIELDS: [&str; 2] = ["image", "file"];
const DEFAULT_ALPHA: f64 = 0.4;

pub struct AppState {
    config: ServiceConfig,
    model: OnceLock<Arc<LoadedModel>>,
    started: Instant,
    gradcam_slots: Arc<Semaphore>,
}

impl AppState {
    /// State with no model yet; inference routes answer 503 until
    /// [`AppState::install`].
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let slots = config.gradcam_concurrency;
        Arc::new(Self { config, model: OnceLock::new(), started: Instant::now(), gradcam_slots: Arc::new(Semaphore::new(slots)) })
    }

    pub fn with_model(config: ServiceConfig, model: LoadedModel) -> Arc<Self> {
        let state = Self::new(config);
        state.install(model);
        state
    }

    /// First install wins; the model is immutable afterwards.
    pub fn install(&self, model: LoadedModel) {
        let _ = self.model.set(Arc::new(model));
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn model(&self) -> Result<Arc<LoadedModel>, ApiError> {
        self.model.get().cloned().ok_or_else(ApiError::not_loaded)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // multipart framing adds a little on top of the file itself
    let body_limit = state.config.max_upload_bytes + 64 * 1024;
    let mut app = Router::new()
        .route("/predict", post(predict))
        .route("/gradcam", post(gradcam))
        .route("/health", get(health))
        .route("/labels", get(labels))
        .route("/examples", get(examples))
        .route("/examples/{name}", get(example_file))
        .route("/api/schema.json", get(schema));
    if let Some(dir) = &state.config.static_dir {
        app = app
            .nest_service("/static", ServeDir::new(dir))
            .route_service("/", tower_http::services::ServeFile::new(dir.join("index.html")));
    } else {
        app = app.route("/", get(|| async { axum::response::Html(PLACEHOLDER_INDEX) }));
    }
    app.fallback(not_found)
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(middleware::from_fn(access_log))
        .with_state(state)
}

async fn access_log(req: Request, next: Next) -> Response {
    let start = Instant::now();
    let (method, path) = (req.method().clone(), req.uri().path().to_string());
    let res = next.run(req).await;
    tracing::info!(
        target: "xraydx_service::access",
        method = %method,
        route = %path,
        status = res.status().as_u16(),
        ms = format!("{:.3}", start.elapsed().as_secs_f64() * 1e3),
        "request"
    );
    res
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// The uploaded image bytes from the first `image` or `file` field.
async fn upload(multipart: Result<Multipart, MultipartRejection>, limit: usize) -> Result<Bytes, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_request("bad_multipart", e.body_text()))?;
    loop {
        let field = multipart.next_field().await.map_err(|e| field_error(e.status(), e.body_text(), limit))?;
        let Some(field) = field else {
            return Err(ApiError::bad_request("missing_image", "multipart body has no `image` field"));
        };
        if field.name().is_some_and(|n| IMAGE_FIELDS.contains(&n)) {
            let bytes = field.bytes().await.map_err(|e| field_error(e.status(), e.body_text(), limit))?;
            if bytes.len() > limit {
                return Err(ApiError::too_large(limit));
            }
            return Ok(bytes);
        }
    }
}

fn field_error(status: StatusCode, text: String, limit: usize) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::too_large(limit)
    } else {
        ApiError::bad_request("bad_multipart", text)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Serialize)]
struct PredictResponse {
    labels: Vec<LabelScore>,
    model_id: String,
    elapsed_ms: f64,
}

async fn predict(
    State(state): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let start = Instant::now();
    let model = state.model()?;
    let bytes = upload(multipart, state.config.max_upload_bytes).await?;
    let max_side = state.config.max_image_side;
    let m = model.clone();
    let labels = blocking(move || m.predict(&bytes, max_side)).await?;
    Ok(Json(PredictResponse { labels, model_id: model.id().to_string(), elapsed_ms: start.elapsed().as_secs_f64() * 1e3 }))
}

async fn gradcam(
    State(state): State<Arc<AppState>>,
    Query(query): Query<HashMap<String, String>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Response, ApiError> {
    if !state.config.gradcam_enabled {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "gradcam_disabled", "Grad-CAM is disabled on this server"));
    }
    let model = state.model()?;
    let name = query.get("class").ok_or_else(|| ApiError::bad_request("missing_class", "query parameter `class` is required"))?;
    let class = model.class_index(name).ok_or_else(|| ApiError {
        valid: Some(model.labels().to_vec()),
        ..ApiError::new(StatusCode::NOT_FOUND, "unknown_class", format!("unknown class {name:?}"))
    })?;
    let alpha = match query.get("alpha") {
        None => DEFAULT_ALPHA,
        Some(a) => a
            .parse::<f64>()
            .ok()
            .filter(|a| (0.0..=1.0).contains(a))
            .ok_or_else(|| ApiError::bad_request("bad_alpha", format!("alpha must be a number in [0, 1], got {a:?}")))?,
    };
    let bytes = upload(multipart, state.config.max_upload_bytes).await?;
    let _permit = state.gradcam_slots.clone().acquire_owned().await.map_err(|e| ApiError::internal(e.to_string()))?;
    let max_side = state.config.max_image_side;
    let png = blocking(move || model.gradcam_png(&bytes, class, alpha, max_side)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], png).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let uptime_s = state.started.elapsed().as_secs_f64();
    match state.model.get() {
        Some(m) => Json(serde_json::json!({ "status": "ok", "model_id": m.id(), "uptime_s": uptime_s })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({ "status": "loading", "model_id": null, "uptime_s": uptime_s })),
        )
            .into_response(),
    }
}

async fn labels(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let model = state.model()?;
    Ok(Json(serde_json::json!({ "labels": model.labels(), "task": model.model().task().as_str() })))
}

fn is_example(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    [".png", ".jpg", ".jpeg"].iter().any(|e| lower.ends_with(e))
}

async fn examples(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let mut names: Vec<String> = match &state.config.examples_dir {
        Some(dir) => std::fs::read_dir(dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
                    .filter_map(|e| e.file_name().into_string().ok())
                    .filter(|n| is_example(n))
                    .collect()
            })
            .unwrap_or_default(),
        None => Vec::new(),
    };
    names.sort();
    let urls: Vec<String> = names.iter().map(|n| format!("/examples/{n}")).collect();
    Json(serde_json::json!({ "examples": urls }))
}

async fn example_file(State(state): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> Result<Response, ApiError> {
    let missing = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no example named {name:?}"));
    let dir = state.config.examples_dir.as_ref().ok_or_else(missing)?;
    if name.contains(['/', '\\']) || name.starts_with('.') || !is_example(&name) {
        return Err(missing());
    }
    let bytes = tokio::fs::read(dir.join(&name)).await.map_err(|_| missing())?;
    let mime = if name.to_ascii_lowercase().ends_with(".png") { "image/png" } else { "image/jpeg" };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn schema() -> Response {
    ([(header::CONTENT_TYPE, "application/schema+json")], SCHEMA).into_response()
}

/// Serve on `listener` while the weights load in the background. A load
/// failure stops the server and is returned.
pub async fn serve_on(
    listener: TcpListener,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    config.validate()?;
    let weights = config.weights.clone().ok_or_else(|| anyhow::anyhow!("no weight file configured"))?;
    let expected = config.labels.clone();
    let state = AppState::new(config);
    tracing::info!(addr = %listener.local_addr()?, weights = %weights.display(), "listening; loading weights");
    let server = axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).into_future();
    tokio::pin!(server);
    let load = tokio::task::spawn_blocking(move || LoadedModel::from_file(&weights, expected.as_deref()));
    tokio::select! {
        done = &mut server => return done.map_err(Into::into),
        loaded = load => {
            let model = loaded??;
            tracing::info!(model_id = model.id(), labels = model.labels().len(), "model ready");
            state.install(model);
        }
    }
    server.await?;
    Ok(())
}

pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let listener = TcpListener::bind((config.host.as_str(), config.port)).await?;
    serve_on(listener, config, shutdown).await
}
