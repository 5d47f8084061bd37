use super::{dim_err, Backward, Mode, Result, Tape, Tensor, TensorError, Var};

/// Per-channel statistics of one training batch. `var` is the unbiased
/// estimate, which is what running averages track.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct BatchNorm {
    channels: usize,
    inner: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm {
    fn for_each_channel(&self, n: usize, mut f: impl FnMut(usize, std::ops::Range<usize>)) {
        for item in 0..n {
            for ch in 0..self.channels {
                let base = (item * self.channels + ch) * self.inner;
                f(ch, base..base + self.inner);
            }
        }
    }
}

impl Backward for BatchNorm {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let gamma = inputs[1].data();
        let n = x.shape()[0];
        let dy = grad.data();
        let count = (n * self.inner) as f64;

        let mut sum_dy = vec![0.0; self.channels];
        let mut sum_dy_xhat = vec![0.0; self.channels];
        self.for_each_channel(n, |ch, r| {
            for i in r {
                sum_dy[ch] += dy[i];
                sum_dy_xhat[ch] += dy[i] * self.xhat[i];
            }
        });

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; x.numel()];
            self.for_each_channel(n, |ch, r| {
                let scale = gamma[ch] * self.inv_std[ch];
                for i in r {
                    dx[i] = if self.train {
                        scale * (dy[i] - sum_dy[ch] / count - self.xhat[i] * sum_dy_xhat[ch] / count)
                    } else {
                        scale * dy[i]
                    };
                }
            });
            Tensor::from_parts(x.shape().to_vec(), dx)
        });
        let dgamma = needs[1].then(|| Tensor::from_parts(vec![self.channels], sum_dy_xhat));
        let dbeta = needs[2].then(|| Tensor::from_parts(vec![self.channels], sum_dy));
        vec![dx, dgamma, dbeta]
    }
}

impl Tape {
    /// Batch normalization over every axis except axis 1.
    ///
    /// In [`Mode::Train`] the batch statistics are used and returned so the
    /// caller can fold them into its running averages; in [`Mode::Eval`] the
    /// supplied running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: Mode,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(input);
        if xs.len() < 2 {
            return Err(dim_err("batch_norm", "input rank", ">= 2", xs.len()));
        }
        let (n, channels) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(v);
            if s != [channels] {
                return Err(dim_err("batch_norm", name, format!("[{channels}]"), format!("{s:?}")));
            }
        }
        let count = n * inner;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(TensorError::DegenerateBatch { op: "batch_norm" });
        }
        if !train && (running_mean.len() != channels || running_var.len() != channels) {
            return Err(dim_err("batch_norm", "running stats", channels, running_mean.len()));
        }

        let x = self.value(input);
        let g = self.value(gamma);
        let b = self.value(beta);
        let xd = x.data();

        let (mean, var_biased) = if train {
            let mut mean = vec![0.0; channels];
            let mut sq = vec![0.0; channels];
            for item in 0..n {
                for ch in 0..channels {
                    let base = (item * channels + ch) * inner;
                    mean[ch] += xd[base..base + inner].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for item in 0..n {
                for ch in 0..channels {
                    let base = (item * channels + ch) * inner;
                    sq[ch] += xd[base..base + inner]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for item in 0..n {
            for ch in 0..channels {
                let base = (item * channels + ch) * inner;
                let (gm, bt) = (g.data()[ch], b.data()[ch]);
                for i in base..base + inner {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gm * h + bt;
                }
            }
        }

        let stats = train.then(|| {
            let unbias = count as f64 / (count as f64 - 1.0);
            BatchStats {
                var: var_biased.iter().map(|v| v * unbias).collect(),
                mean: mean.clone(),
            }
        });
        let op = Box::new(BatchNorm { channels, inner, xhat, inv_std, train });
        let y = self.record(&[input, gamma, beta], Tensor::from_parts(xs, out), op);
        Ok((y, stats))
    }
}
