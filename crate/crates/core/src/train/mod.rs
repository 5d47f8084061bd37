//! Two-phase one-cycle training and the evaluation harness.
//!
//! Phase 1 trains every layer under one one-cycle schedule. Phase 2 freezes
//! the body (`body.*`) and retrains the head with a fresh optimizer and its
//! own, lower, learning-rate range.

mod eval;

pub use eval::{evaluate, evaluate_scores, predict_dataset, task_truth, ClassReport, EvalReport};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Mode, Tape, Tensor, TensorError, Var};
use crate::data::{batch_stream, normalize_batch, AugmentConfig, DataError, Dataset, Vocabulary};
use crate::losses::{binary_cross_entropy_with_logits, weighted_cross_entropy, ClassWeights, Reduction, WeightError};
use crate::model::{GradScope, MiniDenseNet, ModelError};
use crate::optim::{
    apply_weight_decay, lr_range_find, Adam, AdamConfig, LrFinderConfig, LrFinderResult, OneCycle, OptimError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at iteration {iteration} (phase {phase}); model restored to the last good epoch")]
    Diverged { iteration: usize, phase: u8 },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which problem the network solves, in terms of the dataset vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Task {
    /// Two logits: index 0 "all others", index 1 the positive label.
    OneVsAll { positive: usize },
    MultiLabel,
}

/// Name of output 0 of a one-vs-all model.
pub const OTHERS_LABEL: &str = "All others";

impl Task {
    /// Output names of a model solving this task over `vocab`.
    pub fn output_labels(self, vocab: &Vocabulary) -> Vec<String> {
        match self {
            Task::OneVsAll { positive } => vec![OTHERS_LABEL.to_string(), vocab.names()[positive].clone()],
            Task::MultiLabel => vocab.names().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub lr_phase1: (f64, f64),
    pub lr_phase2: (f64, f64),
    pub momentum: (f64, f64),
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weighting: Weighting,
    /// Training-time augmentation; `None` trains on the images as loaded.
    #[serde(skip)]
    pub augment: Option<AugmentConfig>,
}

impl TrainConfig {
    /// 30 phase-1 epochs from 1.32e-2 up to 1e-1; phase 2 at a tenth of that.
    pub fn new(task: Task) -> Self {
        let lr1 = (1.32e-2, 1e-1);
        Self {
            task,
            epochs_phase1: 30,
            epochs_phase2: 5,
            lr_phase1: lr1,
            lr_phase2: (lr1.0 / 10.0, lr1.1 / 10.0),
            momentum: (0.85, 0.95),
            warmup_fraction: 0.3,
            weight_decay: 1e-3,
            batch_size: 64,
            seed: 0,
            weighting: Weighting::Weighted,
            augment: None,
        }
    }

    /// Set the phase-1 range and derive phase 2 as one tenth of it.
    pub fn with_lr(mut self, lr: (f64, f64)) -> Self {
        self.lr_phase1 = lr;
        self.lr_phase2 = (lr.0 / 10.0, lr.1 / 10.0);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.epochs_phase1 == 0 {
            return Err(TrainError::Config("epochs_phase1 must be at least 1".into()));
        }
        for (name, (a, b)) in [("phase-1", self.lr_phase1), ("phase-2", self.lr_phase2)] {
            if !(a > 0.0 && a < b) {
                return Err(TrainError::Config(format!("{name} lr range ({a}, {b}) must be positive and ascending")));
            }
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be at least 2 (batch norm)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub phase: u8,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,phase,epoch,loss,lr,momentum\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:?},{:?},{:?}\n", r.iteration, r.phase, r.epoch, r.loss, r.lr, r.momentum));
        }
        s
    }
}

pub struct TrainOutcome {
    pub history: History,
    /// The model as it stood after phase 1.
    pub phase1: MiniDenseNet,
    pub elapsed_s: f64,
}

/// Per-class targets in the form the task's loss expects.
enum Targets {
    Classes(Vec<usize>),
    Matrix(Tensor),
}

fn targets_for(task: Task, rows: &[Vec<u8>]) -> Targets {
    match task {
        Task::OneVsAll { positive } => Targets::Classes(rows.iter().map(|r| r[positive] as usize).collect()),
        Task::MultiLabel => {
            let c = rows[0].len();
            Targets::Matrix(Tensor::from_fn(&[rows.len(), c], |i| rows[i / c][i % c] as f64))
        }
    }
}

/// Loss weights for `task` from the training targets.
pub fn loss_weights(task: Task, data: &Dataset, weighting: Weighting) -> Result<Option<ClassWeights>> {
    if weighting == Weighting::Unweighted {
        return Ok(None);
    }
    let counts = data.class_counts();
    Ok(Some(match task {
        Task::OneVsAll { positive } => {
            let pos = counts[positive];
            ClassWeights::balanced(&[data.len() - pos, pos])?
        }
        Task::MultiLabel => ClassWeights::one_vs_rest_positive(&counts, data.len())?,
    }))
}

fn loss_on(tape: &Tape, task: Task, logits: Var, targets: &Targets, weights: Option<&ClassWeights>) -> Result<Var> {
    Ok(match (task, targets) {
        (Task::OneVsAll { .. }, Targets::Classes(t)) => {
            let uniform = ClassWeights::uniform(2);
            weighted_cross_entropy(tape, logits, t, weights.unwrap_or(&uniform), Reduction::Mean)?
        }
        (_, Targets::Matrix(y)) => binary_cross_entropy_with_logits(tape, logits, y, weights, None, Reduction::Mean)?,
        _ => unreachable!("targets built for the task"),
    })
}

/// One optimizer step on a raw (unnormalized) batch; returns the loss.
/// Normalization folds the batch into the model's input statistics.
fn train_step(
    model: &mut MiniDenseNet,
    adam: &mut Adam,
    images: &Tensor,
    targets: &Targets,
    task: Task,
    weights: Option<&ClassWeights>,
    lr: f64,
    momentum: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut stats = model.input_stats().clone();
    let (x, _) = normalize_batch(images, Mode::Train, &mut stats)?;
    let tape = Tape::new();
    let xv = tape.constant(x);
    let out = model.forward(&tape, xv, Mode::Train, GradScope::Trainable, rng)?;
    let loss = loss_on(&tape, task, out.logits, targets, weights)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<Option<Tensor>> = out.params.iter().map(|&v| tape.grad(v)).collect();
    adam.step(model.params_mut(), &grads, lr, momentum)?;
    model.update_running_stats(&out.batch_stats);
    model.set_input_stats(stats);
    Ok(value)
}

fn epoch_seed(seed: u64, phase: u8, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((phase as u64) << 32) ^ epoch as u64
}

/// Batches of at least two images in one epoch.
fn usable_batches(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= 2)
}

fn run_phase(
    model: &mut MiniDenseNet,
    data: &Dataset,
    config: &TrainConfig,
    phase: u8,
    epochs: usize,
    lr: (f64, f64),
    weights: Option<&ClassWeights>,
    history: &mut History,
) -> Result<()> {
    let per_epoch = usable_batches(data.len(), config.batch_size);
    if per_epoch == 0 {
        return Err(TrainError::Config("training split has fewer than 2 images".into()));
    }
    let schedule = OneCycle::new((per_epoch * epochs).max(3), lr, config.momentum, config.warmup_fraction)?;
    let mut adam = Adam::new(model.params(), AdamConfig::default());
    let mut it = 0;
    for epoch in 0..epochs {
        let last_good = model.clone();
        let seed = epoch_seed(config.seed, phase, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for batch in batch_stream(data, config.batch_size, true, seed, config.augment.as_ref()) {
            if batch.indices.len() < 2 {
                continue;
            }
            let st = schedule.at(it);
            let targets = targets_for(config.task, &batch.targets);
            let step = train_step(model, &mut adam, &batch.images, &targets, config.task, weights, st.lr, Some(st.momentum), &mut rng);
            let loss = match step {
                Ok(loss) => loss,
                Err(TrainError::Optim(OptimError::NonFinite { .. })) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                *model = last_good;
                return Err(TrainError::Diverged { iteration: history.rows.len(), phase });
            }
            history.rows.push(HistoryRow { iteration: history.rows.len(), phase, epoch, loss, lr: st.lr, momentum: st.momentum });
            it += 1;
        }
        apply_weight_decay(model.params_mut(), config.weight_decay)?;
        tracing::info!(phase, epoch, loss = history.rows.last().map(|r| r.loss), "epoch done");
    }
    Ok(())
}

/// Phase 1 over every layer, then (if `epochs_phase2 > 0`) phase 2 on the
/// head with the body frozen.
pub fn train_two_phase(model: &mut MiniDenseNet, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_task(model, data, config.task)?;
    let start = Instant::now();
    let weights = loss_weights(config.task, data, config.weighting)?;
    let mut history = History::default();
    run_phase(model, data, config, 1, config.epochs_phase1, config.lr_phase1, weights.as_ref(), &mut history)?;
    let phase1 = model.clone();
    if config.epochs_phase2 > 0 {
        model.set_frozen("body.*", true);
        run_phase(model, data, config, 2, config.epochs_phase2, config.lr_phase2, weights.as_ref(), &mut history)?;
    }
    Ok(TrainOutcome { history, phase1, elapsed_s: start.elapsed().as_secs_f64() })
}

fn check_task(model: &MiniDenseNet, data: &Dataset, task: Task) -> Result<()> {
    let want = match task {
        Task::OneVsAll { positive } => {
            if positive >= data.vocab.len() {
                return Err(TrainError::Config(format!("positive class {positive} outside the vocabulary")));
            }
            2
        }
        Task::MultiLabel => data.vocab.len(),
    };
    if model.spec().num_classes != want {
        return Err(TrainError::Config(format!(
            "model has {} outputs, task needs {want}",
            model.spec().num_classes
        )));
    }
    Ok(())
}

/// Learning-rate range test over `data`, cycling through shuffled batches.
/// Model and optimizer state are restored afterwards.
pub fn find_lr(model: &MiniDenseNet, data: &Dataset, config: &TrainConfig, finder: &LrFinderConfig) -> Result<LrFinderResult> {
    check_task(model, data, config.task)?;
    let weights = loss_weights(config.task, data, config.weighting)?;
    let mut batches = Vec::new();
    // last batch index of each pass; weight decay follows it, as in training
    let mut epoch_ends = Vec::new();
    let mut epoch = 0;
    while batches.len() < finder.n + 1 {
        let before = batches.len();
        batches.extend(
            batch_stream(data, config.batch_size, true, epoch_seed(config.seed, 0, epoch), None).filter(|b| b.indices.len() >= 2),
        );
        if batches.len() == before {
            return Err(TrainError::Config("dataset yields no usable batch".into()));
        }
        epoch_ends.push(batches.len() - 1);
        epoch += 1;
    }
    let adam = Adam::new(model.params(), AdamConfig::default());
    let mut state = (model.clone(), adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut failure = None;
    let result = lr_range_find(&mut state, finder, |(m, a), i, lr| {
        let b = &batches[i];
        let targets = targets_for(config.task, &b.targets);
        let loss = train_step(m, a, &b.images, &targets, config.task, weights.as_ref(), lr, None, &mut rng).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            OptimError::Step(msg)
        })?;
        if epoch_ends.contains(&i) {
            apply_weight_decay(m.params_mut(), config.weight_decay)?;
        }
        Ok(loss)
    });
    match (result, failure) {
        (Ok(r), _) => Ok(r),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}
