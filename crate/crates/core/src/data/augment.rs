use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::sample_reflect;
use super::{DataError, Result};
use crate::autograd::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub zoom_scale: f64,
    pub zoom_prob: f64,
    pub lighting_max: f64,
    pub lighting_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            zoom_scale: 1.3,
            zoom_prob: 0.5,
            lighting_max: 0.4,
            lighting_prob: 1.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No-op transform.
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            zoom_scale: 1.0,
            zoom_prob: 0.0,
            lighting_max: 0.0,
            lighting_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.zoom_prob) || !prob(self.lighting_prob) {
            return Err(DataError::Parameter("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.max_rotation_deg >= 0.0) || !(self.zoom_scale > 0.0) || !(0.0..1.0).contains(&self.lighting_max) {
            return Err(DataError::Parameter(format!("invalid augmentation magnitudes in {self:?}")));
        }
        Ok(())
    }

    /// Generator for item `index`; results do not depend on visiting order.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ index)
    }
}

/// Random rotation and zoom with reflection fill, then lighting
/// `clamp(c·x + b, -1, 1)`. Input is `[C, H, W]` in [-1, 1].
pub fn augment(image: &Tensor, config: &AugmentConfig, rng: &mut impl Rng) -> Tensor {
    assert_eq!(image.ndim(), 3, "augment expects [C, H, W]");
    let max_rad = config.max_rotation_deg.to_radians();
    let angle = if max_rad > 0.0 { rng.random_range(-max_rad..=max_rad) } else { 0.0 };
    let zoom = if rng.random::<f64>() < config.zoom_prob { config.zoom_scale } else { 1.0 };
    let lit = rng.random::<f64>() < config.lighting_prob;
    let m = config.lighting_max;
    let (b, c) = if lit && m > 0.0 { (rng.random_range(-m..=m), rng.random_range(1.0 - m..=1.0 + m)) } else { (0.0, 1.0) };

    let mut out = geometric(image, angle, zoom);
    if lit {
        for v in out.data_mut() {
            *v = (c * *v + b).clamp(-1.0, 1.0);
        }
    }
    out
}

/// Rotate by `angle` radians and scale by `zoom` about the centre, sampling
/// with reflection outside the frame.
fn geometric(image: &Tensor, angle: f64, zoom: f64) -> Tensor {
    if angle == 0.0 && zoom == 1.0 {
        return image.clone();
    }
    let shape = image.shape();
    let (channels, h, w) = (shape[0], shape[1], shape[2]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut data = Vec::with_capacity(image.numel());
    for ch in 0..channels {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                // inverse map: output pixel -> source pixel
                let (dy, dx) = ((i as f64 - cy) / zoom, (j as f64 - cx) / zoom);
                let sy = cy + cos * dy - sin * dx;
                let sx = cx + sin * dy + cos * dx;
                data.push(sample_reflect(plane, h, w, sy, sx));
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}
