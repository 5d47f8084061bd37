use std::io::Cursor;
use std::path::Path;

use anyhow::Context;
use axum::http::StatusCode;
use image::{DynamicImage, ImageReader, Limits};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xraydx_core::autograd::Tensor;
use xraydx_core::data::{image_to_tensor, resize_bilinear, Vocabulary};
use xraydx_core::gradcam::{encode_png, gradcam, overlay, Heatmap};
use xraydx_core::model::{self, MiniDenseNet};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub name: String,
    pub probability: f64,
}

/// A read-only model plus the identity reported to clients.
pub struct LoadedModel {
    model: MiniDenseNet,
    id: String,
}

impl LoadedModel {
    pub fn new(model: MiniDenseNet, id: impl Into<String>) -> Self {
        Self { model, id: id.into() }
    }

    /// Load a weight file; the id is a digest of its bytes. With
    /// `expected_labels`, the file must carry exactly that vocabulary.
    pub fn from_file(path: &Path, expected_labels: Option<&[String]>) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let model = model::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
        if let Some(want) = expected_labels {
            anyhow::ensure!(
                model.labels() == want,
                "weight file labels {:?} differ from the configured labels {want:?}",
                model.labels()
            );
        }
        let digest = Sha256::digest(&bytes);
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self::new(model, format!("sha256:{hex}")))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> &[String] {
        self.model.labels()
    }

    pub fn model(&self) -> &MiniDenseNet {
        &self.model
    }

    /// Index of `name`, treating `_` and space alike.
    pub fn class_index(&self, name: &str) -> Option<usize> {
        Vocabulary::new(self.labels().to_vec()).ok()?.index_of(name)
    }

    fn input(&self, img: &DynamicImage) -> Tensor {
        let spec = self.model.spec();
        let t = image_to_tensor(img, spec.input_size);
        if spec.in_channels == 3 {
            return t;
        }
        let plane = spec.input_size * spec.input_size;
        Tensor::new(vec![1, spec.input_size, spec.input_size], t.data()[..plane].to_vec()).expect("one plane")
    }

    /// One probability per output, highest first (ties keep label order).
    pub fn predict(&self, bytes: &[u8], max_side: u32) -> Result<Vec<LabelScore>, ApiError> {
        let img = decode(bytes, max_side)?;
        let batch = Tensor::stack(&[self.input(&img)]).map_err(|e| ApiError::internal(e.to_string()))?;
        let probs = self.model.predict_raw(&batch).map_err(|e| ApiError::internal(e.to_string()))?;
        let mut scores: Vec<LabelScore> = self
            .labels()
            .iter()
            .zip(probs.data())
            .map(|(name, &p)| LabelScore { name: name.clone(), probability: p })
            .collect();
        scores.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        Ok(scores)
    }

    /// Grad-CAM overlay PNG at the uploaded image's own resolution.
    pub fn gradcam_png(&self, bytes: &[u8], class: usize, alpha: f64, max_side: u32) -> Result<Vec<u8>, ApiError> {
        self.explain(bytes, class, alpha, max_side).map(|(_, png)| png)
    }

    /// The upsampled heat-map together with its overlay PNG.
    pub fn explain(&self, bytes: &[u8], class: usize, alpha: f64, max_side: u32) -> Result<(Heatmap, Vec<u8>), ApiError> {
        let img = decode(bytes, max_side)?;
        let small = gradcam(&self.model, &self.input(&img), class).map_err(|e| ApiError::internal(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let values = resize_bilinear(&small.values, small.height, small.width, h, w)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        let heat = Heatmap { values, height: h, width: w, ..small };
        let original = image_to_tensor_exact(&img);
        let rgb = overlay(&original, &heat, alpha).map_err(|e| ApiError::internal(e.to_string()))?;
        let png = encode_png(&rgb).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok((heat, png))
    }
}

/// `[3, H, W]` in [-1, 1] without resizing.
fn image_to_tensor_exact(img: &DynamicImage) -> Tensor {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sized")
}

/// PNG or JPEG, each side at most `max_side` pixels.
pub fn decode(bytes: &[u8], max_side: u32) -> Result<DynamicImage, ApiError> {
    if bytes.is_empty() {
        return Err(ApiError::bad_request("empty_upload", "the uploaded file is empty"));
    }
    let undecodable = |e: &dyn std::fmt::Display| ApiError::bad_request("undecodable_image", format!("not a PNG or JPEG image: {e}"));
    let mut reader = ImageReader::new(Cursor::new(bytes)).with_guessed_format().map_err(|e| undecodable(&e))?;
    let mut limits = Limits::default();
    limits.max_image_width = Some(max_side);
    limits.max_image_height = Some(max_side);
    reader.limits(limits);
    reader.decode().map_err(|e| match e {
        image::ImageError::Limits(_) => ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!("image sides are limited to {max_side} pixels"),
        ),
        other => undecodable(&other),
    })
}
