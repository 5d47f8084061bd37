use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{OptimError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub iteration: usize,
    pub lr: f64,
    /// Used as Adam's β₁ for the step.
    pub momentum: f64,
}

/// Cosine one-cycle policy. The learning rate climbs from `lr_init` to
/// `lr_max` while momentum falls from `mom_high` to `mom_low`; both then
/// reverse, with the learning rate finishing at `lr_init / final_div`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub total_iters: usize,
    pub lr_init: f64,
    pub lr_max: f64,
    pub mom_low: f64,
    pub mom_high: f64,
    pub warmup_fraction: f64,
    pub final_div: f64,
}

/// Cosine ramp from `start` (t=0) to `end` (t=1), exact at both ends.
fn cos_interp(start: f64, end: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return start;
    }
    if t >= 1.0 {
        return end;
    }
    end + (start - end) * (1.0 + (PI * t).cos()) / 2.0
}

impl OneCycle {
    pub fn new(total_iters: usize, lr_range: (f64, f64), momentum_range: (f64, f64), warmup_fraction: f64) -> Result<Self> {
        let s = Self {
            total_iters,
            lr_init: lr_range.0,
            lr_max: lr_range.1,
            mom_low: momentum_range.0,
            mom_high: momentum_range.1,
            warmup_fraction,
            final_div: 25.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Defaults: momentum (0.85, 0.95), warm-up 0.3.
    pub fn with_defaults(total_iters: usize, lr_range: (f64, f64)) -> Result<Self> {
        Self::new(total_iters, lr_range, (0.85, 0.95), 0.3)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OptimError::Parameter(m));
        // start, peak and end must be distinct iterations
        if self.total_iters < 3 {
            return bad(format!("one-cycle needs at least 3 iterations, got {}", self.total_iters));
        }
        if !(self.lr_init > 0.0 && self.lr_init < self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("lr range ({}, {}) must be positive and ascending", self.lr_init, self.lr_max));
        }
        if !(self.mom_low > 0.0 && self.mom_low < self.mom_high && self.mom_high < 1.0) {
            return bad(format!("momentum range ({}, {}) must be ascending inside (0, 1)", self.mom_low, self.mom_high));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if !(self.final_div >= 1.0) {
            return bad(format!("final_div {} below 1", self.final_div));
        }
        Ok(())
    }

    /// Iteration at which the learning rate peaks.
    pub fn peak(&self) -> usize {
        let p = (self.warmup_fraction * self.total_iters as f64).round() as usize;
        p.clamp(1, self.total_iters - 2)
    }

    pub fn at(&self, iteration: usize) -> ScheduleState {
        let peak = self.peak();
        let (lr, momentum) = if iteration <= peak {
            let t = iteration as f64 / peak as f64;
            (cos_interp(self.lr_init, self.lr_max, t), cos_interp(self.mom_high, self.mom_low, t))
        } else {
            let span = (self.total_iters - 1 - peak) as f64;
            let t = (iteration - peak) as f64 / span;
            (
                cos_interp(self.lr_max, self.lr_init / self.final_div, t),
                cos_interp(self.mom_low, self.mom_high, t),
            )
        };
        ScheduleState { iteration, lr, momentum }
    }

    pub fn iter(&self) -> impl Iterator<Item = ScheduleState> + '_ {
        (0..self.total_iters).map(move |i| self.at(i))
    }
}
