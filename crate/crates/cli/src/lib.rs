//! The `xraydx` command line.
//!
//! Every flag listed with an `XRAYDX_…` variable can also be set through the
//! environment; an explicit flag wins over the variable.

use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use xraydx_core::data::{read_label_csv, split_train_valid, LabelTable, Vocabulary};
use xraydx_core::synth;
use xraydx_core::train::{Task, Weighting};

mod evaluation;
mod labels;
mod serve;
mod training;

#[derive(Debug, Parser)]
#[command(name = "xraydx", version, about = "Multi-label chest X-ray diagnosis at desk scale")]
pub struct Cli {
    /// Seed for every random choice (splits, initialization, batching)
    #[arg(long, global = true, env = "XRAYDX_SEED", default_value_t = 0)]
    pub seed: u64,

    /// More log output on stderr (-v debug, -vv trace)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metadata CSV to one-hot label CSV, keeping diseased images only
    PrepareLabels(labels::PrepareArgs),
    /// Label co-occurrence counts as a CSV matrix
    Cooccur(labels::CooccurArgs),
    /// Learning-rate range test, optionally swept over weight decays
    LrFind(training::LrFindArgs),
    /// Two-phase one-cycle training with validation report
    Train(training::TrainArgs),
    /// Evaluation report and curve CSVs from a weight file or a score table
    Eval(evaluation::EvalArgs),
    /// Grad-CAM overlay PNG and heat-map CSV for one or more images
    Gradcam(evaluation::GradcamArgs),
    /// Start the inference HTTP service
    Serve(serve::ServeArgs),
    /// Write the synthetic shape corpus (images, metadata.csv, labels.csv)
    Synth(SynthArgs),
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::INFO,
        1 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_max_level(level)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::PrepareLabels(a) => labels::prepare(a, seed),
        Command::Cooccur(a) => labels::cooccur(a),
        Command::LrFind(a) => training::lr_find(a, seed),
        Command::Train(a) => training::train(a, seed),
        Command::Eval(a) => evaluation::eval(a),
        Command::Gradcam(a) => evaluation::gradcam(a),
        Command::Serve(a) => serve::serve(a),
        Command::Synth(a) => write_synth(a, seed),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
    /// Number of images
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Image side in pixels
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Prevalence of every class but the minority one
    #[arg(long, default_value_t = 0.5)]
    majority_rate: f64,
    /// Prevalence of the minority class
    #[arg(long, default_value_t = 0.1)]
    minority_rate: f64,
    /// Index of the minority class (0 Cross, 1 Disk, 2 Bar, 3 Ring)
    #[arg(long, default_value_t = 3)]
    minority_class: usize,
    /// Chance of a distractor shape in each empty quadrant
    #[arg(long, default_value_t = 0.0)]
    distractors: f64,
}

fn write_synth(a: SynthArgs, seed: u64) -> Result<()> {
    if a.minority_class >= synth::SYNTH_LABELS.len() {
        bail!("--minority-class must be below {}", synth::SYNTH_LABELS.len());
    }
    let config = synth::SynthConfig {
        n_images: a.n,
        size: a.size,
        majority_rate: a.majority_rate,
        minority_class: a.minority_class,
        minority_rate: a.minority_rate,
        distractor_rate: a.distractors,
        seed,
    };
    let files = synth::write_corpus(&config, &a.out).with_context(|| format!("writing corpus to {}", a.out.display()))?;
    println!("wrote {} images to {}", files.count, files.images_dir.display());
    println!("labels: {}", files.labels_csv.display());
    Ok(())
}

// --- shared argument groups and helpers

/// `chest`, `synth`, or a comma-separated label list.
fn parse_vocab(s: &str) -> Result<Vocabulary, String> {
    match s {
        "chest" => Ok(Vocabulary::chest()),
        "synth" => Ok(synth::vocabulary()),
        list => Vocabulary::new(list.split(',').map(|l| l.trim().to_string()).collect()).map_err(|e| e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    MultiLabel,
    OneVsAll,
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    /// multi-label (default) or one-vs-all
    #[arg(long, value_enum, env = "XRAYDX_TASK")]
    task: Option<TaskArg>,
    /// Positive label for --task one-vs-all, e.g. Pneumothorax
    #[arg(long, required_if_eq("task", "one-vs-all"))]
    positive: Option<String>,
}

impl TaskArgs {
    fn resolve(&self, vocab: &Vocabulary) -> Result<Task> {
        match self.task.unwrap_or(TaskArg::MultiLabel) {
            TaskArg::MultiLabel => {
                if self.positive.is_some() {
                    bail!("--positive only applies to --task one-vs-all");
                }
                Ok(Task::MultiLabel)
            }
            TaskArg::OneVsAll => {
                let name = self.positive.as_deref().context("--task one-vs-all needs --positive")?;
                let positive = vocab
                    .index_of(name)
                    .with_context(|| format!("unknown label {name:?}; the table has {}", vocab.names().join(", ")))?;
                Ok(Task::OneVsAll { positive })
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct WeightingArgs {
    /// Class-weighted loss (default)
    #[arg(long, overrides_with = "unweighted")]
    weighted: bool,
    /// Plain loss without class weights
    #[arg(long, overrides_with = "weighted", env = "XRAYDX_UNWEIGHTED")]
    unweighted: bool,
}

impl WeightingArgs {
    fn resolve(&self) -> Weighting {
        if self.unweighted {
            Weighting::Unweighted
        } else {
            Weighting::Weighted
        }
    }
}

/// A label table plus the directory its relative paths resolve against.
#[derive(Debug, Args)]
pub struct TableArgs {
    /// Label CSV (path, findings, one column per label)
    #[arg(long, env = "XRAYDX_LABELS")]
    labels: PathBuf,
    /// Directory that relative image paths in the label CSV resolve against
    #[arg(long, env = "XRAYDX_IMAGES")]
    images: Option<PathBuf>,
}

impl TableArgs {
    fn read(&self) -> Result<LabelTable> {
        read_table(&self.labels)
    }
}

fn read_table(path: &Path) -> Result<LabelTable> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_label_csv(file).with_context(|| format!("reading {}", path.display()))
}

/// Train/validation halves; a zero fraction keeps everything for training.
fn split(table: &LabelTable, valid_pct: f64, seed: u64) -> Result<(LabelTable, Option<LabelTable>)> {
    if valid_pct == 0.0 {
        return Ok((table.clone(), None));
    }
    let (train, valid) = split_train_valid(table, valid_pct, seed)?;
    Ok((train, Some(valid)))
}

/// Write `bytes` to `path`, creating parent directories.
fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn table_bytes(table: &LabelTable) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    xraydx_core::data::write_label_csv(table, &mut buf)?;
    Ok(buf)
}

/// File-name-safe form of a label.
fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}
