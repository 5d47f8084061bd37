use std::path::Path;

use image::DynamicImage;

use super::{DataError, Result};
use crate::autograd::Tensor;

/// Decode PNG or JPEG bytes. `origin` only labels the error.
pub fn decode_image(bytes: &[u8], origin: &str) -> Result<DynamicImage> {
    if bytes.is_empty() {
        return Err(DataError::Image { path: origin.into(), msg: "empty file".into() });
    }
    image::load_from_memory(bytes).map_err(|e| DataError::Image { path: origin.into(), msg: e.to_string() })
}

/// Load an image as a `[3, size, size]` tensor scaled to [-1, 1].
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DataError::Image { path: path.display().to_string(), msg: e.to_string() })?;
    load_image_bytes(&bytes, size, &path.display().to_string())
}

pub fn load_image_bytes(bytes: &[u8], size: usize, origin: &str) -> Result<Tensor> {
    let img = decode_image(bytes, origin)?;
    Ok(image_to_tensor(&img, size))
}

/// Grayscale is replicated to three channels; `p -> p/127.5 - 1` then a
/// bilinear resize.
pub fn image_to_tensor(img: &DynamicImage, size: usize) -> Tensor {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut planes = vec![vec![0.0; h * w]; 3];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            planes[c][i] = px.0[c] as f64 / 127.5 - 1.0;
        }
    }
    let mut data = Vec::with_capacity(3 * size * size);
    for plane in &planes {
        data.extend(resize_bilinear(plane, h, w, size, size));
    }
    Tensor::from_parts(vec![3, size, size], data)
}

fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| plane[clamp_index(yy, h) * w + clamp_index(xx, w)];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Half-pixel-centred bilinear resize with edge clamping.
pub fn resize_bilinear(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if h == out_h && w == out_w {
        return plane.to_vec();
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let y = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        for j in 0..out_w {
            let x = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            out.push(bilinear(plane, h, w, y, x));
        }
    }
    out
}

/// Mirror a continuous pixel coordinate into `[0, n-1]` without repeating
/// the edge sample.
fn reflect(t: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let m = t.rem_euclid(period);
    if m > (n - 1) as f64 {
        period - m
    } else {
        m
    }
}

/// Bilinear sample at `(y, x)` in pixel-index coordinates; outside points
/// are reflected back in.
pub fn sample_reflect(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    bilinear(plane, h, w, reflect(y, h), reflect(x, w))
}
