use serde::{Deserialize, Serialize};

use super::{OptimError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrFinderConfig {
    pub init_lr: f64,
    pub max_lr: f64,
    /// Number of geometric steps; `n + 1` mini-batches are run.
    pub n: usize,
    /// Exponential smoothing factor of the recorded loss.
    pub smoothing: f64,
    /// Stop once the smoothed loss exceeds this multiple of the best.
    pub divergence: f64,
}

impl LrFinderConfig {
    pub fn new(init_lr: f64, max_lr: f64, n: usize) -> Self {
        Self { init_lr, max_lr, n, smoothing: 0.98, divergence: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFinderResult {
    /// `(lr, smoothed_loss)` per mini-batch run.
    pub points: Vec<(f64, f64)>,
    /// Learning rate at the steepest descent of the smoothed curve, if it
    /// descends at all.
    pub suggested_lr: Option<f64>,
    pub stopped_early: bool,
}

impl LrFinderResult {
    /// Two-column `lr,smoothed_loss` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lr,smoothed_loss\n");
        for (lr, loss) in &self.points {
            s.push_str(&format!("{lr:e},{loss}\n"));
        }
        s
    }
}

/// `lr_i = init·(max/init)^(i/n)` for `i = 0..=n`; the last entry is `max`
/// exactly.
pub fn lr_sequence(init_lr: f64, max_lr: f64, n: usize) -> Vec<f64> {
    let q = max_lr / init_lr;
    (0..=n).map(|i| if i == n { max_lr } else { init_lr * q.powf(i as f64 / n as f64) }).collect()
}

/// Sweep the learning rate geometrically, one `step` per mini-batch, and
/// restore `state` afterwards. `step(state, i, lr)` must train on the i-th
/// mini-batch at `lr` and return that batch's loss.
pub fn lr_range_find<S: Clone>(
    state: &mut S,
    config: &LrFinderConfig,
    mut step: impl FnMut(&mut S, usize, f64) -> Result<f64>,
) -> Result<LrFinderResult> {
    if !(config.init_lr > 0.0 && config.init_lr < config.max_lr) {
        return Err(OptimError::Parameter(format!(
            "init_lr {} must be positive and below max_lr {}",
            config.init_lr, config.max_lr
        )));
    }
    if config.n < 10 {
        return Err(OptimError::Parameter(format!("n = {} is below the minimum of 10", config.n)));
    }
    if !(0.0..1.0).contains(&config.smoothing) || config.divergence <= 1.0 {
        return Err(OptimError::Parameter("smoothing must lie in [0, 1) and divergence above 1".into()));
    }
    let snapshot = state.clone();
    let outcome = sweep(state, config, &mut step);
    *state = snapshot;
    outcome
}

fn sweep<S>(state: &mut S, config: &LrFinderConfig, step: &mut impl FnMut(&mut S, usize, f64) -> Result<f64>) -> Result<LrFinderResult> {
    let beta = config.smoothing;
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut points = Vec::new();
    let mut stopped_early = false;
    for (i, lr) in lr_sequence(config.init_lr, config.max_lr, config.n).into_iter().enumerate() {
        let loss = step(state, i, lr)?;
        if i == 0 && !loss.is_finite() {
            return Err(OptimError::ImmediateDivergence { lr });
        }
        avg = beta * avg + (1.0 - beta) * loss;
        let smoothed = avg / (1.0 - beta.powi(i as i32 + 1));
        points.push((lr, smoothed));
        if !smoothed.is_finite() || smoothed > config.divergence * best {
            stopped_early = true;
            break;
        }
        best = best.min(smoothed);
    }
    let suggested_lr = steepest_descent(&points);
    Ok(LrFinderResult { points, suggested_lr, stopped_early })
}

/// Point of most negative slope of loss against log(lr); centred
/// differences inside, one-sided at the ends.
fn steepest_descent(points: &[(f64, f64)]) -> Option<f64> {
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(_, l)| l.is_finite()).collect();
    if finite.len() < 2 {
        return None;
    }
    let x: Vec<f64> = finite.iter().map(|(lr, _)| lr.ln()).collect();
    let y: Vec<f64> = finite.iter().map(|(_, l)| *l).collect();
    let last = finite.len() - 1;
    let slope = |i: usize| {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(last));
        (y[b] - y[a]) / (x[b] - x[a])
    };
    (0..finite.len())
        .map(|i| (i, slope(i)))
        .filter(|(_, s)| *s < 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| finite[i].0)
}
