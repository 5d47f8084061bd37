//! Finite-difference cases for every recorded operation and for the
//! composed desk-scale network. Shared with the acceptance target.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xraydx_core::autograd::gradcheck::{max_gradient_error, relative_error};
use xraydx_core::autograd::{Mode, Tape, Tensor, Var};
use xraydx_core::losses::{binary_cross_entropy_with_logits, weighted_cross_entropy, ClassWeights, Reduction};
use xraydx_core::model::{GradScope, MiniDenseNet, ModelSpec, TaskKind};

pub const OP_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const NET_STEP: f64 = 1e-6;
pub const NET_TOLERANCE: f64 = 1e-3;

type ScalarFn = Box<dyn Fn(&Tape, &[Var]) -> Var>;

pub struct Case {
    pub name: &'static str,
    pub f: ScalarFn,
    pub inputs: Vec<Tensor>,
}

impl Case {
    pub fn max_error(&self) -> f64 {
        max_gradient_error(&self.f, &self.inputs, 24, OP_STEP)
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values at least 0.05 away from zero, so ReLU kinks stay out of reach of
/// the difference step.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Pairwise distinct values 0.01 apart, so max-pool winners are unambiguous.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Tensor::new(shape.to_vec(), ranks.into_iter().map(|r| r as f64 * 0.01 - 0.5).collect()).unwrap()
}

/// Contract `out` against a fixed random tensor so every output coordinate
/// receives a different upstream gradient.
fn project(t: &Tape, out: Var, r: &Tensor) -> Var {
    let w = t.constant(r.clone());
    let prod = t.mul(out, w).unwrap();
    t.sum(prod)
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&Tape, &[Var]) -> Var + 'static) -> Case {
    Case { name, f: Box::new(f), inputs }
}

/// One instance of every operation with shapes and constants drawn from `seed`.
pub fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let n = rng.random_range(1..3usize);
    let c = rng.random_range(1..4usize);
    let hw = rng.random_range(3..7usize);
    let img = [n, c, hw, hw];
    let mut out = Vec::new();

    {
        let cout = rng.random_range(1..4usize);
        let k = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..3usize);
        let pad = if k == 3 { rng.random_range(0..2usize) } else { 0 };
        let ext = (hw + 2 * pad - k) / stride + 1;
        let r = normal(rng, &[n, cout, ext, ext]);
        let with_bias = rng.random::<bool>();
        let inputs = vec![normal(rng, &img), normal(rng, &[cout, c, k, k]), normal(rng, &[cout])];
        out.push(case("conv2d", inputs, move |t, v| {
            let y = t.conv2d(v[0], v[1], with_bias.then_some(v[2]), stride, pad).unwrap();
            project(t, y, &r)
        }));
    }
    {
        let r = normal(rng, &img);
        out.push(case("relu", vec![off_zero(rng, &img)], move |t, v| project(t, t.relu(v[0]), &r)));
    }
    {
        let r = normal(rng, &img);
        out.push(case("sigmoid", vec![normal(rng, &img)], move |t, v| project(t, t.sigmoid(v[0]), &r)));
    }
    {
        let shape = [n + 1, c + 1];
        let r = normal(rng, &shape);
        let x = Tensor::from_fn(&shape, |_| rng.random_range(-4.0..4.0));
        out.push(case("log_softmax", vec![x], move |t, v| project(t, t.log_softmax(v[0], 1).unwrap(), &r)));
    }
    {
        let r = normal(rng, &img);
        let p = rng.random_range(0.1..0.6);
        let mask_seed = rng.random::<u64>();
        out.push(case("dropout", vec![normal(rng, &img)], move |t, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            project(t, t.dropout(v[0], p, Mode::Train, &mut mask_rng).unwrap(), &r)
        }));
    }
    {
        let r = normal(rng, &img);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        out.push(case("scale_add_scalar", vec![normal(rng, &img)], move |t, v| {
            project(t, t.add_scalar(t.scale(v[0], a), b), &r)
        }));
    }
    {
        let r = normal(rng, &img);
        out.push(case("add_mul", vec![normal(rng, &img), normal(rng, &img)], move |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            project(t, t.mul(s, v[1]).unwrap(), &r)
        }));
    }
    {
        let inputs = vec![normal(rng, &img)];
        out.push(case("sum_mean", inputs, move |t, v| {
            let sq = t.mul(v[0], v[0]).unwrap();
            t.add(t.sum(sq), t.scale(t.mean(v[0]), 3.0)).unwrap()
        }));
    }
    {
        let numel = n * c * hw * hw;
        let idx = rng.random_range(0..numel);
        out.push(case("pick", vec![normal(rng, &img)], move |t, v| {
            let p = t.pick(v[0], idx).unwrap();
            t.mul(p, p).unwrap()
        }));
    }
    {
        let r = normal(rng, &[n, c * hw * hw]);
        let r2 = normal(rng, &[n * c, hw * hw]);
        out.push(case("reshape_flatten", vec![normal(rng, &img)], move |t, v| {
            let flat = project(t, t.flatten(v[0]).unwrap(), &r);
            let re = project(t, t.reshape(v[0], &[n * c, hw * hw]).unwrap(), &r2);
            t.add(flat, re).unwrap()
        }));
    }
    {
        let c2 = rng.random_range(1..4usize);
        let r = normal(rng, &[n, c + c2, hw, hw]);
        out.push(case("concat_channels", vec![normal(rng, &img), normal(rng, &[n, c2, hw, hw])], move |t, v| {
            project(t, t.concat_channels(&[v[0], v[1]]).unwrap(), &r)
        }));
    }
    {
        let (fin, fout) = (rng.random_range(1..6usize), rng.random_range(1..5usize));
        let r = normal(rng, &[n + 1, fout]);
        let inputs = vec![normal(rng, &[n + 1, fin]), normal(rng, &[fout, fin]), normal(rng, &[fout])];
        out.push(case("linear", inputs, move |t, v| project(t, t.linear(v[0], v[1], v[2]).unwrap(), &r)));
    }
    {
        let shape = [n + 1, c, hw, hw];
        let r = normal(rng, &shape);
        let inputs = vec![normal(rng, &shape), normal(rng, &[c]), normal(rng, &[c])];
        out.push(case("batch_norm_train", inputs, move |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5, Mode::Train, &[], &[]).unwrap();
            project(t, y, &r)
        }));
    }
    {
        let r = normal(rng, &img);
        let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
        let inputs = vec![normal(rng, &img), normal(rng, &[c]), normal(rng, &[c])];
        out.push(case("batch_norm_eval", inputs, move |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5, Mode::Eval, &mean, &var).unwrap();
            project(t, y, &r)
        }));
    }
    {
        let (k, stride, pad) = [(2, 2, 0), (3, 2, 1), (3, 1, 1), (2, 1, 0)][rng.random_range(0..4)];
        let ext = (hw + 2 * pad - k) / stride + 1;
        let r = normal(rng, &[n, c, ext, ext]);
        out.push(case("max_pool2d", vec![distinct(rng, &img)], move |t, v| {
            project(t, t.max_pool2d(v[0], k, stride, pad).unwrap(), &r)
        }));
    }
    {
        let ext = hw / 2;
        let r = normal(rng, &[n, c, ext, ext]);
        out.push(case("avg_pool2d", vec![normal(rng, &img)], move |t, v| project(t, t.avg_pool2d(v[0], 2, 2).unwrap(), &r)));
    }
    {
        let target = rng.random_range(1..3usize);
        let r = normal(rng, &[n, 2 * c, target, target]);
        let r_avg = normal(rng, &[n, c, target, target]);
        out.push(case("adaptive_pools", vec![distinct(rng, &img)], move |t, v| {
            let cat = project(t, t.adaptive_concat_pool(v[0], target).unwrap(), &r);
            let avg = project(t, t.adaptive_avg_pool(v[0], target).unwrap(), &r_avg);
            let mx = t.sum(t.adaptive_max_pool(v[0], target).unwrap());
            t.add(t.add(cat, avg).unwrap(), mx).unwrap()
        }));
    }
    {
        let classes = c + 1;
        let rows = n + 2;
        let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let w = ClassWeights::new((0..classes).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap();
        let reduction = [Reduction::Mean, Reduction::Sum][rng.random_range(0..2)];
        out.push(case("weighted_cross_entropy", vec![normal(rng, &[rows, classes])], move |t, v| {
            weighted_cross_entropy(t, v[0], &targets, &w, reduction).unwrap()
        }));
    }
    {
        let shape = [n + 1, c + 1];
        let y = Tensor::from_fn(&shape, |_| f64::from(u8::from(rng.random::<bool>())));
        let pw = ClassWeights::new((0..c + 1).map(|_| rng.random_range(0.2..5.0)).collect()).unwrap();
        let sw = Tensor::from_fn(&shape, |_| rng.random_range(0.1..2.0));
        let x = Tensor::from_fn(&shape, |_| rng.random_range(-6.0..6.0));
        out.push(case("bce_with_logits", vec![x], move |t, v| {
            binary_cross_entropy_with_logits(t, v[0], &y, Some(&pw), Some(&sw), Reduction::Mean).unwrap()
        }));
    }
    out
}

/// Weighted BCE of the desk-scale network on a random 2-image batch, in
/// train mode with a fixed dropout mask.
fn network_loss(model: &MiniDenseNet, tape: &Tape, x: Var, y: &Tensor, pw: &ClassWeights, scope: GradScope) -> (Var, Vec<Var>) {
    let mut mask = ChaCha8Rng::seed_from_u64(7);
    let out = model.forward(tape, x, Mode::Train, scope, &mut mask).unwrap();
    let loss = binary_cross_entropy_with_logits(tape, out.logits, y, Some(pw), None, Reduction::Mean).unwrap();
    (loss, out.params)
}

/// Largest relative error over a few random parameter and input coordinates
/// of the composed network built from `seed`.
pub fn network_error(seed: u64, coords: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let classes = 14;
    let labels = (0..classes).map(|i| format!("c{i}")).collect();
    let model = MiniDenseNet::build(ModelSpec::desk(classes), TaskKind::MultiLabel, labels, seed).unwrap();
    let s = model.spec().input_size;
    let x = normal(&mut rng, &[2, 3, s, s]);
    let y = Tensor::from_fn(&[2, classes], |_| f64::from(u8::from(rng.random::<bool>())));
    let pw = ClassWeights::new((0..classes).map(|_| rng.random_range(0.5..5.0)).collect()).unwrap();

    let tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let (loss, params) = network_loss(&model, &tape, xv, &y, &pw, GradScope::All);
    tape.backward(loss).unwrap();

    let eval = |m: &MiniDenseNet, x: &Tensor| {
        let t = Tape::new();
        let xv = t.constant(x.clone());
        let (l, _) = network_loss(m, &t, xv, &y, &pw, GradScope::None);
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let p = rng.random_range(0..model.params().len());
        let numel = model.params().iter().nth(p).unwrap().value.numel();
        let j = rng.random_range(0..numel);
        let analytic = tape.grad(params[p]).map_or(0.0, |g| g.data()[j]);
        let mut plus = model.clone();
        plus.params_mut().iter_mut().nth(p).unwrap().value.data_mut()[j] += NET_STEP;
        let mut minus = model.clone();
        minus.params_mut().iter_mut().nth(p).unwrap().value.data_mut()[j] -= NET_STEP;
        let numeric = (eval(&plus, &x) - eval(&minus, &x)) / (2.0 * NET_STEP);
        worst = worst.max(relative_error(analytic, numeric));
    }
    let gx = tape.grad(xv).unwrap();
    for _ in 0..coords.div_ceil(2) {
        let j = rng.random_range(0..x.numel());
        let mut xp = x.clone();
        xp.data_mut()[j] += NET_STEP;
        let mut xm = x.clone();
        xm.data_mut()[j] -= NET_STEP;
        let numeric = (eval(&model, &xp) - eval(&model, &xm)) / (2.0 * NET_STEP);
        worst = worst.max(relative_error(gx.data()[j], numeric));
    }
    worst
}
