//! Three explorers for the browser page in `www/`, computed by the same
//! metric, schedule and loss code the pipeline trains with.
//!
//! Each explorer has a typed Rust function and a `*_json` wrapper exported to
//! JavaScript; errors cross the boundary as strings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use wasm_bindgen::prelude::wasm_bindgen;
use xraydx_core::autograd::{Tape, Tensor};
use xraydx_core::losses::{binary_cross_entropy_with_logits, ClassWeights, Reduction};
use xraydx_core::metrics::{pr_curve, roc_curve, CurveData};
use xraydx_core::optim::{lr_range_find, lr_sequence, LrFinderConfig, OneCycle};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// AUC for ROC, average precision for PR.
    pub summary: f64,
}

impl From<CurveData> for Curve {
    fn from(c: CurveData) -> Self {
        Self { x: c.xs(), y: c.ys(), summary: c.summary }
    }
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, String> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
}

// --- ROC / PR under a binormal score model

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binormal {
    pub roc: Curve,
    pub pr: Curve,
    /// Φ(d / √(1 + s²)), the AUC of the continuous model.
    pub analytic_auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Negative scores ~ N(0, 1), positive ~ N(`separation`, `sd_ratio`²), laid
/// out on evenly spaced quantiles so the curves move smoothly with the
/// sliders. `prevalence` sets the positive share of `n` samples.
pub fn binormal(separation: f64, sd_ratio: f64, prevalence: f64, n: usize) -> Result<Binormal, String> {
    if !(sd_ratio > 0.0) || !separation.is_finite() {
        return Err("need a finite separation and a positive spread".into());
    }
    if !(0.0..=1.0).contains(&prevalence) || n < 2 {
        return Err("need a prevalence in [0, 1] and at least two samples".into());
    }
    let positives = ((n as f64 * prevalence).round() as usize).clamp(1, n - 1);
    let negatives = n - positives;
    let quantiles = |count: usize, mean: f64, sd: f64| -> Result<Vec<f64>, String> {
        let d = Normal::new(mean, sd).map_err(|e| e.to_string())?;
        Ok((0..count).map(|i| d.inverse_cdf((i as f64 + 0.5) / count as f64)).collect())
    };
    let mut scores = quantiles(negatives, 0.0, 1.0)?;
    scores.extend(quantiles(positives, separation, sd_ratio)?);
    let mut truth = vec![0u8; negatives];
    truth.extend(std::iter::repeat_n(1u8, positives));

    let roc = roc_curve(&scores, &truth).map_err(|e| e.to_string())?;
    let pr = pr_curve(&scores, &truth).map_err(|e| e.to_string())?;
    let std_normal = Normal::standard();
    Ok(Binormal {
        roc: roc.into(),
        pr: pr.into(),
        analytic_auc: std_normal.cdf(separation / (1.0 + sd_ratio * sd_ratio).sqrt()),
        positives,
        negatives,
    })
}

#[wasm_bindgen]
pub fn binormal_json(separation: f64, sd_ratio: f64, prevalence: f64, n: usize) -> Result<String, String> {
    to_json(binormal(separation, sd_ratio, prevalence, n))
}

// --- one-cycle schedule and LR range test

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cycle {
    pub lr: Vec<f64>,
    pub momentum: Vec<f64>,
    pub peak: usize,
}

pub fn one_cycle(total: usize, lr_low: f64, lr_high: f64, warmup: f64, momentum_low: f64, momentum_high: f64) -> Result<Cycle, String> {
    let sched = OneCycle::new(total, (lr_low, lr_high), (momentum_low, momentum_high), warmup).map_err(|e| e.to_string())?;
    let (lr, momentum) = sched.iter().map(|s| (s.lr, s.momentum)).unzip();
    Ok(Cycle { lr, momentum, peak: sched.peak() })
}

#[wasm_bindgen]
pub fn one_cycle_json(total: usize, lr_low: f64, lr_high: f64, warmup: f64, momentum_low: f64, momentum_high: f64) -> Result<String, String> {
    to_json(one_cycle(total, lr_low, lr_high, warmup, momentum_low, momentum_high))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finder {
    pub sequence: Vec<f64>,
    /// `(lr, smoothed loss)` until the sweep stops.
    pub points: Vec<(f64, f64)>,
    pub suggested_lr: Option<f64>,
    pub stopped_early: bool,
    /// Plain gradient descent on the toy problem diverges above this rate.
    pub stability_limit: f64,
}

const TOY_DIMS: usize = 8;

/// The range test run on a noisy quadratic bowl whose curvatures spread
/// geometrically from `curvature / 10` to `curvature`: one SGD step per
/// learning rate, loss measured before the step.
pub fn lr_finder(init_lr: f64, max_lr: f64, n: usize, curvature: f64, noise: f64, seed: u64) -> Result<Finder, String> {
    if !(curvature > 0.0) || !(noise >= 0.0) {
        return Err("curvature must be positive and noise non-negative".into());
    }
    let a: Vec<f64> = (0..TOY_DIMS).map(|k| curvature * 10f64.powf(k as f64 / (TOY_DIMS - 1) as f64 - 1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![1.0; TOY_DIMS];
    let config = LrFinderConfig::new(init_lr, max_lr, n);
    let result = lr_range_find(&mut w, &config, |w, _, lr| {
        let loss = 0.5 * w.iter().zip(&a).map(|(x, c)| c * x * x).sum::<f64>();
        for (x, c) in w.iter_mut().zip(&a) {
            let z: f64 = StandardNormal.sample(&mut rng);
            let g = c * *x + noise * z;
            *x -= lr * g;
        }
        Ok(loss)
    })
    .map_err(|e| e.to_string())?;
    Ok(Finder {
        sequence: lr_sequence(init_lr, max_lr, n),
        points: result.points,
        suggested_lr: result.suggested_lr,
        stopped_early: result.stopped_early,
        stability_limit: 2.0 / curvature,
    })
}

#[wasm_bindgen]
pub fn lr_finder_json(init_lr: f64, max_lr: f64, n: usize, curvature: f64, noise: f64, seed: u32) -> Result<String, String> {
    to_json(lr_finder(init_lr, max_lr, n, curvature, noise, u64::from(seed)))
}

// --- class weights and weighted BCE

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Weighting {
    /// Balanced `(negative, positive)` weights, n / (2 n_c).
    pub balanced: [f64; 2],
    /// Positive-side weight the multi-label BCE uses.
    pub pos_weight: f64,
    pub logits: Vec<f64>,
    pub loss_positive: Vec<f64>,
    pub loss_positive_weighted: Vec<f64>,
    pub loss_negative: Vec<f64>,
    /// d loss / d logit for a positive, weighted.
    pub grad_positive_weighted: Vec<f64>,
    /// Total `(negative, positive)` loss at logit 0: plain, balanced, BCE.
    pub mass_plain: [f64; 2],
    pub mass_balanced: [f64; 2],
    pub mass_bce: [f64; 2],
}

/// Loss and gradient curves over logits in [-`span`, `span`] for a class
/// with the given counts.
pub fn class_weighting(positives: usize, negatives: usize, span: f64, points: usize) -> Result<Weighting, String> {
    let balanced = ClassWeights::balanced(&[negatives, positives]).map_err(|e| e.to_string())?;
    let pw = ClassWeights::one_vs_rest_positive(&[positives], positives + negatives).map_err(|e| e.to_string())?;
    if !(span > 0.0) || points < 2 {
        return Err("need a positive span and at least two points".into());
    }
    let logits: Vec<f64> = (0..points).map(|i| -span + 2.0 * span * i as f64 / (points - 1) as f64).collect();

    let bce = |target: f64, weights: Option<&ClassWeights>| -> Result<(Vec<f64>, Vec<f64>), String> {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![points, 1], logits.clone()).map_err(|e| e.to_string())?, true);
        let y = Tensor::from_fn(&[points, 1], |_| target);
        let each = binary_cross_entropy_with_logits(&tape, x, &y, weights, None, Reduction::None).map_err(|e| e.to_string())?;
        let total = binary_cross_entropy_with_logits(&tape, x, &y, weights, None, Reduction::Sum).map_err(|e| e.to_string())?;
        tape.backward(total).map_err(|e| e.to_string())?;
        let grad = tape.grad(x).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; points]);
        Ok((tape.value(each).data().to_vec(), grad))
    };
    let (loss_positive, _) = bce(1.0, None)?;
    let (loss_positive_weighted, grad_positive_weighted) = bce(1.0, Some(&pw))?;
    let (loss_negative, _) = bce(0.0, None)?;

    let ln2 = std::f64::consts::LN_2;
    let (b, p) = (balanced.as_slice(), pw.as_slice()[0]);
    let (nn, np) = (negatives as f64, positives as f64);
    Ok(Weighting {
        balanced: [b[0], b[1]],
        pos_weight: p,
        logits,
        loss_positive,
        loss_positive_weighted,
        loss_negative,
        grad_positive_weighted,
        mass_plain: [nn * ln2, np * ln2],
        mass_balanced: [nn * b[0] * ln2, np * b[1] * ln2],
        mass_bce: [nn * ln2, np * p * ln2],
    })
}

#[wasm_bindgen]
pub fn class_weighting_json(positives: usize, negatives: usize, span: f64, points: usize) -> Result<String, String> {
    to_json(class_weighting(positives, negatives, span, points))
}
