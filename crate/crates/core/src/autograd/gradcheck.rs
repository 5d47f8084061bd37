//! Central finite-difference checks of recorded gradients.

use super::{Tape, Tensor, Var};

/// Gradients below this magnitude are compared absolutely (scaled by it).
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Evaluate a scalar function of `inputs` on a fresh tape.
pub fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    tape.value(f(&tape, &vars)).item()
}

/// Reverse-mode gradients of `f` with respect to every input.
pub fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Vec<Tensor>
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&tape, &vars);
    tape.backward(loss).expect("scalar loss");
    vars.iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// `(f(x + h e) - f(x - h e)) / 2h` along coordinate `coord` of input `which`.
pub fn numeric_partial<F>(f: &F, inputs: &[Tensor], which: usize, coord: usize, h: f64) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let mut plus = inputs.to_vec();
    plus[which].data_mut()[coord] += h;
    let mut minus = inputs.to_vec();
    minus[which].data_mut()[coord] -= h;
    (eval_scalar(f, &plus) - eval_scalar(f, &minus)) / (2.0 * h)
}

/// Largest relative error over evenly spaced coordinates of every input,
/// at most `coords_per_input` each.
pub fn max_gradient_error<F>(f: &F, inputs: &[Tensor], coords_per_input: usize, h: f64) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let grads = analytic_grads(f, inputs);
    let mut worst: f64 = 0.0;
    for (which, (input, grad)) in inputs.iter().zip(&grads).enumerate() {
        let n = input.numel();
        if n == 0 {
            continue;
        }
        let stride = (n / coords_per_input.min(n)).max(1);
        for coord in (0..n).step_by(stride).take(coords_per_input) {
            let num = numeric_partial(f, inputs, which, coord, h);
            worst = worst.max(relative_error(grad.data()[coord], num));
        }
    }
    worst
}
