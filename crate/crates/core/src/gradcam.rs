//! Grad-CAM heat-maps and their colour overlays.
//!
//! For a target class c with logit y and feature maps A_k of the hooked
//! layer, `α_k = mean_ij ∂y/∂A_k[i,j]` and the map is `ReLU(Σ_k α_k·A_k)`,
//! upsampled bilinearly to the input size and divided by its maximum.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{Mode, Tape, Tensor, TensorError, Var};
use crate::data::resize_bilinear;
use crate::model::{GradScope, MiniDenseNet, ModelError, FEATURE_LAYER};

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("size mismatch: image is {image:?}, heat-map is {heatmap:?}")]
    Size { image: (usize, usize), heatmap: (usize, usize) },
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("expected an image of shape [C, H, W], got {0:?}")]
    ImageShape(Vec<usize>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("png encoding: {0}")]
    Encode(String),
}

pub type Result<T> = std::result::Result<T, GradCamError>;

/// Anything that can expose a feature map and class logits for one image.
pub trait CamModel {
    /// Record a forward pass for `image: [C, H, W]` on `tape`, returning the
    /// feature map `[1, K, h, w]` and logits `[1, classes]`. The feature
    /// node must require gradients.
    fn cam_forward(&self, tape: &Tape, image: &Tensor) -> Result<(Var, Var)>;
    fn num_classes(&self) -> usize;
    fn feature_layer(&self) -> String;
}

impl CamModel for MiniDenseNet {
    fn cam_forward(&self, tape: &Tape, image: &Tensor) -> Result<(Var, Var)> {
        let batch = Tensor::stack(std::slice::from_ref(image))?;
        let x = tape.constant(self.normalize_input(&batch)?);
        // every parameter is a gradient leaf so the feature node records a
        // gradient; eval mode keeps dropout and batch norm deterministic
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(tape, x, Mode::Eval, GradScope::All, &mut rng)?;
        Ok((out.features, out.logits))
    }

    fn num_classes(&self) -> usize {
        self.spec().num_classes
    }

    fn feature_layer(&self) -> String {
        FEATURE_LAYER.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Row-major `height × width` values in [0, 1].
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub source_layer: String,
    pub target_class: usize,
}

impl Heatmap {
    /// `(row, col)` of the largest value; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// One CSV row per image row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// `ReLU(Σ_k α_k·A_k)` on the feature grid, with α_k the spatial mean of the
/// gradient. Both tensors are `[1, K, h, w]`.
pub fn coarse_cam(features: &Tensor, grads: &Tensor) -> Vec<f64> {
    let s = features.shape();
    let (k, plane) = (s[1], s[2] * s[3]);
    let mut cam = vec![0.0; plane];
    for ch in 0..k {
        let g = &grads.data()[ch * plane..(ch + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        let a = &features.data()[ch * plane..(ch + 1) * plane];
        for (c, &v) in cam.iter_mut().zip(a) {
            *c += alpha * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

pub fn gradcam<M: CamModel + ?Sized>(model: &M, image: &Tensor, target_class: usize) -> Result<Heatmap> {
    let classes = model.num_classes();
    if target_class >= classes {
        return Err(GradCamError::ClassOutOfRange { class: target_class, classes });
    }
    if image.ndim() != 3 {
        return Err(GradCamError::ImageShape(image.shape().to_vec()));
    }
    let (height, width) = (image.shape()[1], image.shape()[2]);
    let tape = Tape::new();
    let (features, logits) = model.cam_forward(&tape, image)?;
    let score = tape.pick(logits, target_class)?;
    tape.backward(score)?;
    let fmap = tape.value(features);
    let grads = tape.grad(features).unwrap_or_else(|| Tensor::zeros(fmap.shape()));
    let cam = coarse_cam(&fmap, &grads);
    let (h, w) = (fmap.shape()[2], fmap.shape()[3]);
    let mut values = resize_bilinear(&cam, h, w, height, width);
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Heatmap { values, height, width, source_layer: model.feature_layer(), target_class })
}

/// Blue (cold) through cyan, yellow to red (hot).
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let band = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
    [band(3.0), band(2.0), band(1.0)]
}

/// Alpha-blend the coloured heat-map over `image: [C, H, W]` in [-1, 1].
/// Grayscale images (C = 1) are replicated to RGB.
pub fn overlay(image: &Tensor, heatmap: &Heatmap, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GradCamError::Alpha(alpha));
    }
    let s = image.shape();
    if s.len() != 3 || (s[0] != 1 && s[0] != 3) {
        return Err(GradCamError::ImageShape(s.to_vec()));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) != (heatmap.height, heatmap.width) {
        return Err(GradCamError::Size { image: (h, w), heatmap: (heatmap.height, heatmap.width) });
    }
    let plane = h * w;
    let d = image.data();
    let mut out = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let idx = i * w + j;
            let color = colormap(heatmap.values[idx]);
            let mut px = [0u8; 3];
            for (ch, p) in px.iter_mut().enumerate() {
                let base = (d[(ch % c) * plane + idx].clamp(-1.0, 1.0) + 1.0) * 127.5;
                *p = ((1.0 - alpha) * base + alpha * 255.0 * color[ch]).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(j as u32, i as u32, Rgb(px));
        }
    }
    Ok(out)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png).map_err(|e| GradCamError::Encode(e.to_string()))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Feature map is the image itself; logit k is the mean of channel k.
    struct MeanOfChannel {
        offset: f64,
    }

    impl CamModel for MeanOfChannel {
        fn cam_forward(&self, tape: &Tape, image: &Tensor) -> Result<(Var, Var)> {
            let f = tape.leaf(Tensor::stack(std::slice::from_ref(image))?, true);
            let pooled = tape.adaptive_avg_pool(f, 1)?;
            let logits = tape.flatten(pooled)?;
            Ok((f, tape.add_scalar(logits, self.offset)))
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn feature_layer(&self) -> String {
            "identity".into()
        }
    }

    fn quadrant_image() -> Tensor {
        // channel 1 is bright only in the bottom-right quadrant
        Tensor::from_fn(&[2, 8, 8], |i| {
            let (ch, r, c) = (i / 64, (i % 64) / 8, i % 8);
            if ch == 1 && r >= 4 && c >= 4 {
                1.0
            } else if ch == 0 {
                0.2
            } else {
                0.0
            }
        })
    }

    #[test]
    fn localizes_the_bright_quadrant() {
        let m = MeanOfChannel { offset: 0.0 };
        let hm = gradcam(&m, &quadrant_image(), 1).unwrap();
        let (r, c) = hm.argmax();
        assert!(r >= 4 && c >= 4);
        assert_eq!(hm.max(), 1.0);
        assert!(hm.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((hm.height, hm.width), (8, 8));
    }

    #[test]
    fn constant_logit_offset_is_invisible() {
        let a = gradcam(&MeanOfChannel { offset: 0.0 }, &quadrant_image(), 1).unwrap();
        let b = gradcam(&MeanOfChannel { offset: 7.5 }, &quadrant_image(), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_weights_give_zero_map() {
        let features = Tensor::full(&[1, 2, 2, 2], 1.0);
        let grads = Tensor::full(&[1, 2, 2, 2], -0.3);
        assert!(coarse_cam(&features, &grads).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_out_of_range() {
        let err = gradcam(&MeanOfChannel { offset: 0.0 }, &quadrant_image(), 2).unwrap_err();
        assert!(matches!(err, GradCamError::ClassOutOfRange { class: 2, classes: 2 }));
    }

    #[test]
    fn overlay_contract() {
        let img = Tensor::from_fn(&[1, 4, 4], |i| i as f64 / 8.0 - 1.0);
        let zero = Heatmap { values: vec![0.0; 16], height: 4, width: 4, source_layer: "x".into(), target_class: 0 };
        let plain = overlay(&img, &zero, 0.0).unwrap();
        for (i, px) in plain.pixels().enumerate() {
            let v = ((i as f64 / 8.0) * 127.5).round() as u8;
            assert_eq!(px.0, [v, v, v]);
        }
        let cold = overlay(&img, &zero, 1.0).unwrap();
        assert!(cold.pixels().all(|p| p.0 == [0, 0, 128]));
        let bytes = encode_png(&cold).unwrap();
        let back = image::load_from_memory(&bytes).unwrap().to_rgb8();
        assert_eq!(back, cold);
        let wrong = Heatmap { height: 2, width: 8, ..zero };
        assert!(overlay(&img, &wrong, 0.5).is_err());
        assert!(overlay(&img, &Heatmap { height: 4, width: 4, ..wrong }, 1.5).is_err());
    }
}
