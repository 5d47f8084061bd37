use rand::Rng;

use super::{dim_err, Backward, Mode, Result, Tape, Tensor, TensorError, Var};

/// Elementwise op whose derivative is a function of (input, output).
struct Pointwise {
    deriv: fn(f64, f64) -> f64,
}

impl Backward for Pointwise {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let data = inputs[0]
                .data()
                .iter()
                .zip(output.data())
                .zip(grad.data())
                .map(|((&x, &y), &g)| g * (self.deriv)(x, y))
                .collect();
            Tensor::from_parts(inputs[0].shape().to_vec(), data)
        });
        vec![dx]
    }
}

struct Scaled {
    mask: Vec<f64>,
}

impl Backward for Scaled {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let data = grad.data().iter().zip(&self.mask).map(|(g, m)| g * m).collect();
            Tensor::from_parts(inputs[0].shape().to_vec(), data)
        });
        vec![dx]
    }
}

struct SumAll {
    scale: f64,
}

impl Backward for SumAll {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| Tensor::full(inputs[0].shape(), grad.item() * self.scale))]
    }
}

struct LogSoftmax {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Backward for LogSoftmax {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let (y, g) = (output.data(), grad.data());
            let mut dx = vec![0.0; y.len()];
            for o in 0..self.outer {
                for i in 0..self.inner {
                    let at = |k: usize| (o * self.len + k) * self.inner + i;
                    let gsum: f64 = (0..self.len).map(|k| g[at(k)]).sum();
                    for k in 0..self.len {
                        dx[at(k)] = g[at(k)] - y[at(k)].exp() * gsum;
                    }
                }
            }
            Tensor::from_parts(inputs[0].shape().to_vec(), dx)
        });
        vec![dx]
    }
}

struct Binary {
    kind: BinaryKind,
}

enum BinaryKind {
    Add,
    Mul,
}

impl Backward for Binary {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let shape = inputs[0].shape().to_vec();
        let side = |other: &Tensor| -> Tensor {
            match self.kind {
                BinaryKind::Add => grad.clone(),
                BinaryKind::Mul => Tensor::from_parts(
                    shape.clone(),
                    grad.data().iter().zip(other.data()).map(|(g, o)| g * o).collect(),
                ),
            }
        };
        vec![
            needs[0].then(|| side(inputs[1])),
            needs[1].then(|| side(inputs[0])),
        ]
    }
}

struct Concat {
    /// Channel count of each input.
    widths: Vec<usize>,
    inner: usize,
}

impl Backward for Concat {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let n = inputs[0].shape()[0];
        let total: usize = self.widths.iter().sum();
        let g = grad.data();
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (k, (&width, input)) in self.widths.iter().zip(inputs).enumerate() {
            if needs[k] {
                let chunk = width * self.inner;
                let mut d = Vec::with_capacity(n * chunk);
                for item in 0..n {
                    let start = (item * total + offset) * self.inner;
                    d.extend_from_slice(&g[start..start + chunk]);
                }
                out.push(Some(Tensor::from_parts(input.shape().to_vec(), d)));
            } else {
                out.push(None);
            }
            offset += width;
        }
        out
    }
}

struct Reshape;

impl Backward for Reshape {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| Tensor::from_parts(inputs[0].shape().to_vec(), grad.data().to_vec()))]
    }
}

struct Pick {
    index: usize,
}

impl Backward for Pick {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| {
            let mut d = Tensor::zeros(inputs[0].shape());
            d.data_mut()[self.index] = grad.item();
            d
        })]
    }
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(dim_err(op, "shape", format!("{sa:?}"), format!("{sb:?}")));
    }
    Ok(())
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn pointwise(&self, input: Var, f: fn(f64) -> f64, deriv: fn(f64, f64) -> f64) -> Var {
        let value = self.value(input).map(f);
        self.record(&[input], value, Box::new(Pointwise { deriv }))
    }

    pub fn relu(&self, input: Var) -> Var {
        self.pointwise(input, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, input: Var) -> Var {
        self.pointwise(input, sigmoid, |_, y| y * (1.0 - y))
    }

    /// Log-softmax along `axis`, evaluated with max subtraction.
    pub fn log_softmax(&self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input);
        if axis >= shape.len() {
            return Err(dim_err("log_softmax", "axis", format!("< {}", shape.len()), axis));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(input);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| xd[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..len).map(|k| (xd[at(k)] - m).exp()).sum::<f64>().ln();
                for k in 0..len {
                    out[at(k)] = xd[at(k)] - lse;
                }
            }
        }
        let value = Tensor::from_parts(shape, out);
        Ok(self.record(&[input], value, Box::new(LogSoftmax { outer, len, inner })))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    pub fn dropout(&self, input: Var, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Parameter {
                op: "dropout",
                msg: format!("probability {p} outside [0, 1)"),
            });
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(&[input], value, Box::new(Scaled { mask })))
    }

    pub fn scale(&self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let mask = vec![factor; x.numel()];
        self.record(&[input], x.map(|v| v * factor), Box::new(Scaled { mask }))
    }

    pub fn add_scalar(&self, input: Var, c: f64) -> Var {
        self.pointwise_const(input, c)
    }

    fn pointwise_const(&self, input: Var, c: f64) -> Var {
        let x = self.value(input);
        let mask = vec![1.0; x.numel()];
        self.record(&[input], x.map(|v| v + c), Box::new(Scaled { mask }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(&[a, b], value, Box::new(Binary { kind: BinaryKind::Add })))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(&[a, b], value, Box::new(Binary { kind: BinaryKind::Mul })))
    }

    pub fn sum(&self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.record(&[input], Tensor::scalar(s), Box::new(SumAll { scale: 1.0 }))
    }

    pub fn mean(&self, input: Var) -> Var {
        let x = self.value(input);
        let scale = 1.0 / x.numel() as f64;
        self.record(&[input], Tensor::scalar(x.sum() * scale), Box::new(SumAll { scale }))
    }

    /// Scalar element at flat position `index`.
    pub fn pick(&self, input: Var, index: usize) -> Result<Var> {
        let x = self.value(input);
        if index >= x.numel() {
            return Err(TensorError::Index { op: "pick", index, len: x.numel() });
        }
        let value = Tensor::scalar(x.data()[index]);
        Ok(self.record(&[input], value, Box::new(Pick { index })))
    }

    pub fn reshape(&self, input: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let value = (*x).clone().reshape(shape)?;
        Ok(self.record(&[input], value, Box::new(Reshape)))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let rest: usize = s[1..].iter().product();
        self.reshape(input, &[s[0], rest])
    }

    /// Concatenate along axis 1. All inputs must agree on every other axis.
    pub fn concat_channels(&self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .map(|&v| self.shape(v))
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        if first.len() < 2 {
            return Err(dim_err("concat", "rank", ">= 2", first.len()));
        }
        let n = first[0];
        let inner: usize = first[2..].iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s[0] != n || s[2..] != first[2..] {
                return Err(dim_err("concat", "non-channel axes", format!("{first:?}"), format!("{s:?}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let values: Vec<_> = inputs.iter().map(|&v| self.value(v)).collect();
        let mut data = Vec::with_capacity(n * total * inner);
        for item in 0..n {
            for (val, &width) in values.iter().zip(&widths) {
                let chunk = width * inner;
                data.extend_from_slice(&val.data()[item * chunk..(item + 1) * chunk]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total;
        let value = Tensor::from_parts(shape, data);
        Ok(self.record(inputs, value, Box::new(Concat { widths, inner })))
    }
}
