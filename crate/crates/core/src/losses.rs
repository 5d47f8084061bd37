//! Class-weighted cross-entropy and binary cross-entropy with logits.

use thiserror::Error;

use crate::autograd::{dim_err, sigmoid, Backward, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("class {class} has zero samples; its weight is undefined")]
    ZeroCount { class: usize },
    #[error("no class counts given")]
    Empty,
    #[error("class weight {value} at index {class} is not a positive finite number")]
    NonPositive { class: usize, value: f64 },
}

/// Positive per-class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> std::result::Result<Self, WeightError> {
        if weights.is_empty() {
            return Err(WeightError::Empty);
        }
        for (class, &value) in weights.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(WeightError::NonPositive { class, value });
            }
        }
        Ok(Self(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    /// Balanced weights `n_samples / (n_classes * n_c)`.
    pub fn balanced(counts: &[usize]) -> std::result::Result<Self, WeightError> {
        if counts.is_empty() {
            return Err(WeightError::Empty);
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(WeightError::ZeroCount { class });
        }
        let total: usize = counts.iter().sum();
        let k = counts.len() as f64;
        Ok(Self(counts.iter().map(|&c| total as f64 / (k * c as f64)).collect()))
    }

    /// Positive-class weights for multi-label training: the balanced weight
    /// of the positive side of each one-vs-rest split.
    pub fn one_vs_rest_positive(positives: &[usize], samples: usize) -> std::result::Result<Self, WeightError> {
        let weights = positives
            .iter()
            .enumerate()
            .map(|(class, &pos)| {
                if pos == 0 || pos == samples {
                    return Err(WeightError::ZeroCount { class });
                }
                Ok(samples as f64 / (2.0 * pos as f64))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    None,
    #[default]
    Mean,
    Sum,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct CrossEntropy {
    targets: Vec<usize>,
    sample_weight: Vec<f64>,
    /// Scale applied to each sample's upstream gradient (1 or 1/Σw).
    reduction: Reduction,
    denom: f64,
}

impl Backward for CrossEntropy {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let x = inputs[0];
            let c = x.shape()[1];
            let mut dx = vec![0.0; x.numel()];
            for (n, row) in x.data().chunks(c).enumerate() {
                let g = match self.reduction {
                    Reduction::None => grad.data()[n],
                    Reduction::Sum => grad.item(),
                    Reduction::Mean => grad.item() / self.denom,
                } * self.sample_weight[n];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for (j, &v) in row.iter().enumerate() {
                    let p = (v - m).exp() / z;
                    let delta = if j == self.targets[n] { 1.0 } else { 0.0 };
                    dx[n * c + j] = g * (p - delta);
                }
            }
            Tensor::from_parts(x.shape().to_vec(), dx)
        });
        vec![dx]
    }
}

/// Class-weighted softmax cross-entropy on raw logits `[N, C]`.
///
/// Per sample: `w[t] * (logsumexp(x) - x[t])`. The mean reduction divides by
/// the sum of the applied weights, so balanced weights reproduce the plain mean.
pub fn weighted_cross_entropy(
    tape: &Tape,
    logits: Var,
    targets: &[usize],
    weights: &ClassWeights,
    reduction: Reduction,
) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape.len() != 2 {
        return Err(dim_err("cross_entropy", "logits rank", 2, shape.len()));
    }
    let (n, c) = (shape[0], shape[1]);
    if targets.len() != n {
        return Err(dim_err("cross_entropy", "targets", n, targets.len()));
    }
    if weights.len() != c {
        return Err(dim_err("cross_entropy", "class weights", c, weights.len()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(TensorError::Index { op: "cross_entropy", index: bad, len: c });
    }
    let x = tape.value(logits);
    let w = weights.as_slice();
    let sample_weight: Vec<f64> = targets.iter().map(|&t| w[t]).collect();
    let per_sample: Vec<f64> = x
        .data()
        .chunks(c)
        .zip(targets)
        .zip(&sample_weight)
        .map(|((row, &t), &sw)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            sw * (lse - row[t])
        })
        .collect();
    let denom: f64 = sample_weight.iter().sum();
    let value = match reduction {
        Reduction::None => Tensor::from_parts(vec![n], per_sample),
        Reduction::Sum => Tensor::scalar(per_sample.iter().sum()),
        Reduction::Mean => Tensor::scalar(per_sample.iter().sum::<f64>() / denom),
    };
    let op = CrossEntropy {
        targets: targets.to_vec(),
        sample_weight,
        reduction,
        denom,
    };
    Ok(tape.record(&[logits], value, Box::new(op)))
}

struct BceWithLogits {
    targets: Vec<f64>,
    pos_weight: Vec<f64>,
    sample_weight: Option<Vec<f64>>,
    reduction: Reduction,
}

impl BceWithLogits {
    fn weight(&self, i: usize) -> f64 {
        self.sample_weight.as_ref().map_or(1.0, |w| w[i])
    }
}

impl Backward for BceWithLogits {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let x = inputs[0];
            let c = x.shape()[1];
            let count = x.numel() as f64;
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &xi)| {
                    let y = self.targets[i];
                    let p = self.pos_weight[i % c];
                    let s = sigmoid(xi);
                    let local = self.weight(i) * ((1.0 - y) * s - p * y * (1.0 - s));
                    let g = match self.reduction {
                        Reduction::None => grad.data()[i],
                        Reduction::Sum => grad.item(),
                        Reduction::Mean => grad.item() / count,
                    };
                    g * local
                })
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        });
        vec![dx]
    }
}

/// Binary cross-entropy on raw logits `[N, C]` with positive-class weights
/// `p_c` and optional per-element weights `w_{n,c}`.
///
/// Per element: `w * (p * y * softplus(-x) + (1 - y) * softplus(x))`, which is
/// the sigmoid-then-log form rewritten to stay finite for any logit. The mean
/// reduction divides by `N * C`.
pub fn binary_cross_entropy_with_logits(
    tape: &Tape,
    logits: Var,
    targets: &Tensor,
    pos_weight: Option<&ClassWeights>,
    sample_weight: Option<&Tensor>,
    reduction: Reduction,
) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape.len() != 2 {
        return Err(dim_err("bce_with_logits", "logits rank", 2, shape.len()));
    }
    let c = shape[1];
    if targets.shape() != shape.as_slice() {
        return Err(dim_err("bce_with_logits", "targets", format!("{shape:?}"), format!("{:?}", targets.shape())));
    }
    if let Some(&bad) = targets.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(TensorError::Contract(format!("bce target {bad} is not 0 or 1")));
    }
    let pos_weight = match pos_weight {
        Some(w) if w.len() != c => {
            return Err(dim_err("bce_with_logits", "positive weights", c, w.len()));
        }
        Some(w) => w.as_slice().to_vec(),
        None => vec![1.0; c],
    };
    if let Some(w) = sample_weight {
        if w.shape() != shape.as_slice() {
            return Err(dim_err("bce_with_logits", "sample weights", format!("{shape:?}"), format!("{:?}", w.shape())));
        }
    }
    let op = BceWithLogits {
        targets: targets.data().to_vec(),
        pos_weight,
        sample_weight: sample_weight.map(|w| w.data().to_vec()),
        reduction,
    };
    let x = tape.value(logits);
    let per_elem: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let y = op.targets[i];
            let p = op.pos_weight[i % c];
            op.weight(i) * (p * y * softplus(-xi) + (1.0 - y) * softplus(xi))
        })
        .collect();
    let value = match reduction {
        Reduction::None => Tensor::from_parts(shape, per_elem),
        Reduction::Sum => Tensor::scalar(per_elem.iter().sum()),
        Reduction::Mean => Tensor::scalar(per_elem.iter().sum::<f64>() / per_elem.len() as f64),
    };
    Ok(tape.record(&[logits], value, Box::new(op)))
}
