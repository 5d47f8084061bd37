//! MiniDenseNet: a DenseNet-121-shaped body with a pooled classification head.
//!
//! The body is a stem (7×7/2 convolution, batch norm, ReLU, 3×3/2 max-pool),
//! four dense blocks separated by transitions, and a final batch norm + ReLU.
//! Each dense layer is BN-ReLU-Conv1×1-BN-ReLU-Conv3×3 and appends
//! `growth_rate` channels. The head concatenates global max and average
//! pooling and runs BN1d, dropout, linear, ReLU and a final linear layer.

mod io;
mod params;

pub use io::{from_bytes, load, load_expecting, save, to_bytes, FormatError, FORMAT_VERSION};
pub use params::{Parameters, ParamTensor, RunningStats};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{dim_err, BatchStats, Mode, Tape, Tensor, TensorError, Var};
use crate::data::{ChannelStats, CHEST_LABELS};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Bottleneck width multiplier of the 1×1 convolution inside a dense layer.
pub const BN_SIZE: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub init_features: usize,
    pub growth_rate: usize,
    pub block_layers: [usize; 4],
    pub num_classes: usize,
    pub head_dropout: f64,
    pub head_hidden: usize,
    pub input_size: usize,
}

impl ModelSpec {
    /// CPU-friendly default: trains on a laptop in minutes.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            in_channels: 3,
            init_features: 16,
            growth_rate: 8,
            block_layers: [2, 2, 2, 2],
            num_classes,
            head_dropout: 0.5,
            head_hidden: 512,
            input_size: 64,
        }
    }

    /// The full DenseNet-121 body at 224×224.
    pub fn densenet121(num_classes: usize) -> Self {
        Self {
            init_features: 64,
            growth_rate: 32,
            block_layers: [6, 12, 24, 16],
            input_size: 224,
            ..Self::desk(num_classes)
        }
    }

    /// Check the spec and derive the feature count and spatial extent after
    /// every stage.
    pub fn plan(&self) -> Result<Plan> {
        let positive = [
            ("in_channels", self.in_channels),
            ("init_features", self.init_features),
            ("growth_rate", self.growth_rate),
            ("num_classes", self.num_classes),
            ("head_hidden", self.head_hidden),
            ("input_size", self.input_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Spec(format!("{name} must be positive")));
            }
        }
        if let Some(b) = self.block_layers.iter().position(|&l| l == 0) {
            return Err(ModelError::Spec(format!("dense block {b} has no layers")));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(ModelError::Spec(format!("head_dropout {} outside [0, 1)", self.head_dropout)));
        }
        if self.input_size < 8 {
            return Err(ModelError::Spec(format!("input_size {} too small for the stem", self.input_size)));
        }
        let stem_conv = (self.input_size + 2 * 3 - 7) / 2 + 1;
        let mut spatial = (stem_conv + 2 - 3) / 2 + 1;
        let mut features = self.init_features;
        let mut blocks = Vec::with_capacity(4);
        for (b, &layers) in self.block_layers.iter().enumerate() {
            let block_in = features;
            features += layers * self.growth_rate;
            let block = BlockPlan { in_features: block_in, out_features: features, spatial, transition_out: None };
            blocks.push(block);
            if b < 3 {
                if spatial % 2 != 0 || spatial < 2 {
                    return Err(ModelError::Spec(format!(
                        "spatial extent {spatial} after dense block {b} cannot be halved by a 2×2 transition"
                    )));
                }
                let out = features / 2;
                if out == 0 {
                    return Err(ModelError::Spec(format!("transition {b} leaves no features")));
                }
                blocks[b].transition_out = Some(out);
                features = out;
                spatial /= 2;
            }
        }
        Ok(Plan { stem_spatial: stem_conv, blocks, final_features: features, final_spatial: spatial })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub in_features: usize,
    pub out_features: usize,
    pub spatial: usize,
    pub transition_out: Option<usize>,
}

/// Derived layer dimensions of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub stem_spatial: usize,
    pub blocks: Vec<BlockPlan>,
    pub final_features: usize,
    pub final_spatial: usize,
}

impl Plan {
    /// Channels entering the head's first linear layer (max ⊕ avg pooling).
    pub fn head_in(&self) -> usize {
        2 * self.final_features
    }
}

/// What the classifier is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Softmax over `[rest, positive]` logits.
    OneVsAll,
    /// Independent sigmoid per class.
    MultiLabel,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::OneVsAll => "one-vs-all",
            TaskKind::MultiLabel => "multi-label",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one-vs-all" => Some(TaskKind::OneVsAll),
            "multi-label" => Some(TaskKind::MultiLabel),
            _ => None,
        }
    }
}

/// Which parameter leaves are recorded as requiring gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Non-frozen parameters only.
    Trainable,
    /// Every parameter, frozen or not.
    All,
    /// Nothing; inference only.
    None,
}

pub struct ForwardOutput {
    pub logits: Var,
    /// Body output (after the final BN + ReLU), the Grad-CAM hook point.
    pub features: Var,
    /// Parameter leaves in [`Parameters`] order.
    pub params: Vec<Var>,
    /// Batch statistics per running-stat slot (train mode only).
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// Name of the layer whose activations feed Grad-CAM.
pub const FEATURE_LAYER: &str = "body.norm5";

#[derive(Debug, Clone, PartialEq)]
pub struct MiniDenseNet {
    spec: ModelSpec,
    plan: Plan,
    task: TaskKind,
    labels: Vec<String>,
    params: Parameters,
    /// Dataset channel statistics used to standardize raw inputs.
    input_stats: ChannelStats,
}

impl MiniDenseNet {
    /// Build a freshly initialised network. He fan-in normal initialisation
    /// for convolutions and linear weights, zero biases, unit BN scale.
    pub fn build(spec: ModelSpec, task: TaskKind, labels: Vec<String>, seed: u64) -> Result<Self> {
        let plan = spec.plan()?;
        if labels.len() != spec.num_classes {
            return Err(ModelError::Spec(format!(
                "{} labels for {} classes",
                labels.len(),
                spec.num_classes
            )));
        }
        if task == TaskKind::OneVsAll && spec.num_classes != 2 {
            return Err(ModelError::Spec("one-vs-all needs exactly 2 classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Parameters::default();
        let he = |shape: &[usize], rng: &mut ChaCha8Rng| {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            Tensor::from_fn(shape, |_| normal.sample(rng))
        };
        let bn = |params: &mut Parameters, name: &str, c: usize| {
            params.push(format!("{name}.weight"), Tensor::ones(&[c]));
            params.push(format!("{name}.bias"), Tensor::zeros(&[c]));
            params.push_stats(name.to_string(), c);
        };

        let k = spec.in_channels;
        params.push("body.stem.conv".into(), he(&[spec.init_features, k, 7, 7], &mut rng));
        bn(&mut params, "body.stem.norm", spec.init_features);
        let bottleneck = BN_SIZE * spec.growth_rate;
        for (b, block) in plan.blocks.iter().enumerate() {
            for l in 0..spec.block_layers[b] {
                let prefix = format!("body.block{b}.layer{l}");
                let fin = block.in_features + l * spec.growth_rate;
                bn(&mut params, &format!("{prefix}.norm1"), fin);
                params.push(format!("{prefix}.conv1"), he(&[bottleneck, fin, 1, 1], &mut rng));
                bn(&mut params, &format!("{prefix}.norm2"), bottleneck);
                params.push(format!("{prefix}.conv2"), he(&[spec.growth_rate, bottleneck, 3, 3], &mut rng));
            }
            if let Some(out) = block.transition_out {
                let prefix = format!("body.transition{b}");
                bn(&mut params, &format!("{prefix}.norm"), block.out_features);
                params.push(format!("{prefix}.conv"), he(&[out, block.out_features, 1, 1], &mut rng));
            }
        }
        bn(&mut params, FEATURE_LAYER, plan.final_features);
        let head_in = plan.head_in();
        bn(&mut params, "head.norm", head_in);
        params.push("head.fc1.weight".into(), he(&[spec.head_hidden, head_in], &mut rng));
        params.push("head.fc1.bias".into(), Tensor::zeros(&[spec.head_hidden]));
        params.push("head.fc2.weight".into(), he(&[spec.num_classes, spec.head_hidden], &mut rng));
        params.push("head.fc2.bias".into(), Tensor::zeros(&[spec.num_classes]));

        let input_stats = ChannelStats::identity(spec.in_channels);
        Ok(Self { spec, plan, task, labels, params, input_stats })
    }

    /// Multi-label model over the 14 chest findings.
    pub fn chest(spec: ModelSpec, seed: u64) -> Result<Self> {
        let labels = CHEST_LABELS.iter().map(|s| s.to_string()).collect();
        Self::build(spec, TaskKind::MultiLabel, labels, seed)
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        task: TaskKind,
        labels: Vec<String>,
        params: Parameters,
        input_stats: ChannelStats,
    ) -> Result<Self> {
        let reference = Self::build(spec.clone(), task, labels.clone(), 0)?;
        params.check_layout(&reference.params)?;
        if input_stats.channels() != spec.in_channels {
            return Err(ModelError::Spec(format!(
                "input statistics cover {} channels, spec has {}",
                input_stats.channels(),
                spec.in_channels
            )));
        }
        Ok(Self { plan: reference.plan, spec, task, labels, params, input_stats })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn input_stats(&self) -> &ChannelStats {
        &self.input_stats
    }

    pub fn set_input_stats(&mut self, stats: ChannelStats) {
        assert_eq!(stats.channels(), self.spec.in_channels, "input stats channel count");
        self.input_stats = stats;
    }

    /// Standardize raw `[N, C, S, S]` images in [-1, 1] with the stored
    /// dataset statistics.
    pub fn normalize_input(&self, raw: &Tensor) -> Result<Tensor> {
        let mut stats = self.input_stats.clone();
        crate::data::normalize_batch(raw, Mode::Eval, &mut stats)
            .map(|(t, _)| t)
            .map_err(|e| ModelError::Spec(e.to_string()))
    }

    /// Probabilities for raw images: normalization, then eval forward.
    pub fn predict_raw(&self, raw: &Tensor) -> Result<Tensor> {
        self.predict_proba(&self.normalize_input(raw)?)
    }

    /// Flag every parameter whose name matches `pattern` (`*` wildcards) as
    /// frozen. Returns the number of tensors matched.
    pub fn set_frozen(&mut self, pattern: &str, frozen: bool) -> usize {
        self.params.set_frozen(pattern, frozen)
    }

    /// Run the network on `images: [N, C, S, S]`, returning raw logits.
    pub fn forward(
        &self,
        tape: &Tape,
        images: Var,
        mode: Mode,
        scope: GradScope,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutput> {
        let shape = tape.shape(images);
        let s = self.spec.input_size;
        if shape.len() != 4 {
            return Err(dim_err("forward", "image rank", 4, shape.len()).into());
        }
        if shape[1] != self.spec.in_channels {
            return Err(dim_err("forward", "channel (axis 1)", self.spec.in_channels, shape[1]).into());
        }
        if shape[2] != s || shape[3] != s {
            return Err(dim_err("forward", "spatial (axes 2, 3)", format!("{s}x{s}"), format!("{}x{}", shape[2], shape[3])).into());
        }

        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                let grad = match scope {
                    GradScope::Trainable => !p.frozen,
                    GradScope::All => true,
                    GradScope::None => false,
                };
                tape.leaf(p.value.clone(), grad)
            })
            .collect();
        let mut layer = LayerCtx { tape, model: self, vars: &vars, mode, batch_stats: Vec::new() };

        let mut x = tape.conv2d(images, layer.p("body.stem.conv"), None, 2, 3)?;
        x = layer.bn_relu("body.stem.norm", x)?;
        x = tape.max_pool2d(x, 3, 2, 1)?;

        for (b, block) in self.plan.blocks.iter().enumerate() {
            for l in 0..self.spec.block_layers[b] {
                let prefix = format!("body.block{b}.layer{l}");
                let mut h = layer.bn_relu(&format!("{prefix}.norm1"), x)?;
                h = tape.conv2d(h, layer.p(&format!("{prefix}.conv1")), None, 1, 0)?;
                h = layer.bn_relu(&format!("{prefix}.norm2"), h)?;
                h = tape.conv2d(h, layer.p(&format!("{prefix}.conv2")), None, 1, 1)?;
                x = tape.concat_channels(&[x, h])?;
            }
            if block.transition_out.is_some() {
                let prefix = format!("body.transition{b}");
                x = layer.bn_relu(&format!("{prefix}.norm"), x)?;
                x = tape.conv2d(x, layer.p(&format!("{prefix}.conv")), None, 1, 0)?;
                x = tape.avg_pool2d(x, 2, 2)?;
            }
        }
        let features = layer.bn_relu(FEATURE_LAYER, x)?;

        let mut h = tape.adaptive_concat_pool(features, 1)?;
        h = tape.flatten(h)?;
        h = layer.bn("head.norm", h)?;
        h = tape.dropout(h, self.spec.head_dropout, mode, rng)?;
        h = tape.linear(h, layer.p("head.fc1.weight"), layer.p("head.fc1.bias"))?;
        h = tape.relu(h);
        let logits = tape.linear(h, layer.p("head.fc2.weight"), layer.p("head.fc2.bias"))?;

        let batch_stats = layer.batch_stats;
        Ok(ForwardOutput { logits, features, params: vars, batch_stats })
    }

    /// Eval-mode logits for a batch, with no gradient bookkeeping.
    pub fn predict_logits(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(images.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&tape, x, Mode::Eval, GradScope::None, &mut rng)?;
        Ok((*tape.value(out.logits)).clone())
    }

    /// Class probabilities: sigmoid per class for multi-label models,
    /// softmax over the pair for one-vs-all models.
    pub fn predict_proba(&self, images: &Tensor) -> Result<Tensor> {
        let logits = self.predict_logits(images)?;
        Ok(probabilities(self.task, &logits))
    }

    /// Fold batch statistics from a train-mode forward into the running
    /// averages.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats)]) {
        self.params.update_running(stats, BN_MOMENTUM);
    }
}

/// Convert logits `[N, C]` to probabilities for `task`.
pub fn probabilities(task: TaskKind, logits: &Tensor) -> Tensor {
    let c = logits.shape()[1];
    let mut out = logits.clone();
    match task {
        TaskKind::MultiLabel => {
            out.data_mut().iter_mut().for_each(|v| *v = crate::autograd::sigmoid(*v));
        }
        TaskKind::OneVsAll => {
            for row in out.data_mut().chunks_mut(c) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                row.iter_mut().for_each(|v| *v = (*v - m).exp() / z);
            }
        }
    }
    out
}

struct LayerCtx<'a> {
    tape: &'a Tape,
    model: &'a MiniDenseNet,
    vars: &'a [Var],
    mode: Mode,
    batch_stats: Vec<(usize, BatchStats)>,
}

impl LayerCtx<'_> {
    fn p(&self, name: &str) -> Var {
        let idx = self
            .model
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a built model"));
        self.vars[idx]
    }

    fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        let slot = self
            .model
            .params
            .stats_index_of(name)
            .unwrap_or_else(|| panic!("running stats {name} missing from a built model"));
        let rs = &self.model.params.stats()[slot];
        let (y, stats) = self.tape.batch_norm(
            x,
            self.p(&format!("{name}.weight")),
            self.p(&format!("{name}.bias")),
            BN_EPS,
            self.mode,
            &rs.mean,
            &rs.var,
        )?;
        if let Some(s) = stats {
            self.batch_stats.push((slot, s));
        }
        Ok(y)
    }

    fn bn_relu(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.bn(name, x)?;
        Ok(self.tape.relu(y))
    }
}
