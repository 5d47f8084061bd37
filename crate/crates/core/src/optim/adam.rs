use super::{OptimError, Result};
use crate::autograd::Tensor;
use crate::model::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators for every tensor of a [`Parameters`] set, in its
/// order. Frozen tensors keep their moments untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    /// Running products of the first and second moment decay rates; with a
    /// scheduled β₁ the bias correction uses the product of the rates
    /// actually applied.
    beta1_prod: f64,
    beta2_prod: f64,
}

impl Adam {
    pub fn new(params: &Parameters, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            step: 0,
            beta1_prod: 1.0,
            beta2_prod: 1.0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }

    /// One bias-corrected Adam update. `grads[i]` belongs to the i-th
    /// parameter; `None` counts as a zero gradient. `beta1` overrides the
    /// configured β₁ for this step (the schedule's momentum).
    pub fn step(&mut self, params: &mut Parameters, grads: &[Option<Tensor>], lr: f64, beta1: Option<f64>) -> Result<()> {
        if grads.len() != params.len() {
            return Err(OptimError::Parameter(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.frozen {
                continue;
            }
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(OptimError::Parameter(format!("gradient shape {:?} for {}", g.shape(), p.name)));
                }
                if !g.all_finite() {
                    return Err(OptimError::NonFinite { param: p.name.clone() });
                }
            }
        }
        let b1 = beta1.unwrap_or(self.config.beta1);
        let b2 = self.config.beta2;
        self.step += 1;
        self.beta1_prod *= b1;
        self.beta2_prod *= b2;
        let (c1, c2) = (1.0 - self.beta1_prod, 1.0 - self.beta2_prod);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let values = p.value.data_mut();
            for j in 0..values.len() {
                let gj = g.as_ref().map_or(0.0, |g| g.data()[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                values[j] -= lr * m_hat / (v_hat.sqrt() + self.config.eps);
            }
        }
        Ok(())
    }
}

/// Weight tensors (convolution kernels, linear weights) decay; batch-norm
/// affine parameters and biases, all rank 1, do not.
pub fn decays(value: &Tensor) -> bool {
    value.ndim() >= 2
}

/// Multiply every non-frozen weight tensor by `1 - wd`. Meant to run once
/// per epoch.
pub fn apply_weight_decay(params: &mut Parameters, wd: f64) -> Result<()> {
    if !(0.0..1.0).contains(&wd) {
        return Err(OptimError::Parameter(format!("weight decay {wd} outside [0, 1)")));
    }
    if wd == 0.0 {
        return Ok(());
    }
    for p in params.iter_mut().filter(|p| !p.frozen && decays(&p.value)) {
        p.value.data_mut().iter_mut().for_each(|v| *v *= 1.0 - wd);
    }
    Ok(())
}
