use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::image_io::load_image;
use super::labels::{LabelTable, Vocabulary};
use super::{DataError, Result};
use crate::autograd::{Mode, Tensor};

/// Added to a zero standard deviation.
pub const STD_GUARD: f64 = 1e-6;
/// Standard deviations below this are rounding noise on constant data.
const ZERO_STD: f64 = 1e-12;

/// Per-channel input statistics, accumulated over every training batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Number of values folded in so far (per channel).
    pub count: f64,
}

impl ChannelStats {
    /// Mean 0, std 1: normalization is a no-op until data is seen.
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels], count: 0.0 }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Pooled merge of a batch's population moments.
    fn merge(&mut self, mean: &[f64], var: &[f64], n: f64) {
        if self.count == 0.0 {
            self.mean = mean.to_vec();
            self.std = var.iter().map(|v| v.sqrt()).collect();
            self.count = n;
            return;
        }
        let total = self.count + n;
        for c in 0..self.mean.len() {
            let (ma, va) = (self.mean[c], self.std[c] * self.std[c]);
            let delta = mean[c] - ma;
            let m = ma + delta * n / total;
            let v = (self.count * va + n * var[c] + delta * delta * self.count * n / total) / total;
            self.mean[c] = m;
            self.std[c] = v.max(0.0).sqrt();
        }
        self.count = total;
    }
}

fn channel_moments(batch: &Tensor) -> (Vec<f64>, Vec<f64>, usize) {
    let s = batch.shape();
    let (n, c) = (s[0], s[1]);
    let plane: usize = s[2..].iter().product();
    let count = n * plane;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let d = batch.data();
    for ch in 0..c {
        let vals = (0..n).flat_map(|i| d[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter());
        let m = vals.clone().sum::<f64>() / count as f64;
        mean[ch] = m;
        var[ch] = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
    }
    (mean, var, count)
}

fn apply(batch: &Tensor, mean: &[f64], std: &[f64]) -> Tensor {
    let s = batch.shape();
    let c = s[1];
    let plane: usize = s[2..].iter().product();
    let mut out = batch.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = (i / plane) % c;
        *v = (*v - mean[ch]) / std[ch];
    }
    out
}

fn guard(std: &[f64], warnings: &mut Vec<String>) -> Vec<f64> {
    std.iter()
        .enumerate()
        .map(|(c, &s)| {
            if s < ZERO_STD {
                let msg = format!("channel {c} has zero standard deviation; adding {STD_GUARD}");
                tracing::warn!("{msg}");
                warnings.push(msg);
                s + STD_GUARD
            } else {
                s
            }
        })
        .collect()
}

/// Per-channel standardization of `[N, C, H, W]`. Train mode uses the
/// batch's own moments and folds them into `stats`; eval mode uses `stats`.
/// Returns the normalized batch and any zero-std warnings.
pub fn normalize_batch(batch: &Tensor, mode: Mode, stats: &mut ChannelStats) -> Result<(Tensor, Vec<String>)> {
    if batch.ndim() < 3 {
        return Err(DataError::Parameter(format!("normalize_batch expects [N, C, ...], got {:?}", batch.shape())));
    }
    let (n, c) = (batch.shape()[0], batch.shape()[1]);
    if c != stats.channels() {
        return Err(DataError::Parameter(format!("batch has {c} channels, stats have {}", stats.channels())));
    }
    let mut warnings = Vec::new();
    match mode {
        Mode::Train => {
            if n < 2 {
                return Err(DataError::Parameter("train-mode normalization needs at least 2 images".into()));
            }
            let (mean, var, count) = channel_moments(batch);
            stats.merge(&mean, &var, count as f64);
            let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            let std = guard(&std, &mut warnings);
            Ok((apply(batch, &mean, &std), warnings))
        }
        Mode::Eval => {
            let std = guard(&stats.std, &mut warnings);
            Ok((apply(batch, &stats.mean, &std), warnings))
        }
    }
}

/// Decoded images and their multi-hot targets, held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub images: Vec<Tensor>,
    pub targets: Vec<Vec<u8>>,
    pub paths: Vec<String>,
}

impl Dataset {
    /// Decode every row of `table`. Relative paths resolve against `root`.
    pub fn load(table: &LabelTable, root: Option<&Path>, size: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(table.len());
        for row in &table.rows {
            let p = Path::new(&row.path);
            let full = match root {
                Some(r) if p.is_relative() => r.join(p),
                _ => p.to_path_buf(),
            };
            images.push(load_image(full, size)?);
        }
        Ok(Self {
            vocab: table.vocab.clone(),
            images,
            targets: table.rows.iter().map(|r| r.one_hot.clone()).collect(),
            paths: table.rows.iter().map(|r| r.path.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            vocab: self.vocab.clone(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            paths: idx.iter().map(|&i| self.paths[i].clone()).collect(),
        }
    }

    /// Positive counts per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.len()];
        for t in &self.targets {
            for (c, &b) in counts.iter_mut().zip(t) {
                *c += b as usize;
            }
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, C, S, S]`, before normalization.
    pub images: Tensor,
    pub targets: Vec<Vec<u8>>,
    pub indices: Vec<usize>,
}

pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: Option<(&'a AugmentConfig, u64)>,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let items: Vec<Tensor> = indices
            .iter()
            .map(|&i| match self.augment {
                Some((cfg, salt)) => augment(&self.data.images[i], cfg, &mut cfg.rng_for(salt ^ i as u64)),
                None => self.data.images[i].clone(),
            })
            .collect();
        let images = Tensor::stack(&items).expect("dataset images share one shape");
        let targets = indices.iter().map(|&i| self.data.targets[i].clone()).collect();
        Some(Batch { images, targets, indices })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

impl BatchIter<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// One epoch of batches. The final partial batch is kept. With `shuffle`,
/// the order is a seeded permutation; augmentation randomness comes from
/// per-item generators so it does not depend on batch composition.
pub fn batch_stream<'a>(
    data: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    augment: Option<&'a AugmentConfig>,
) -> BatchIter<'a> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..data.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let salt = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    BatchIter { data, order, pos: 0, batch_size, augment: augment.map(|c| (c, salt)) }
}
