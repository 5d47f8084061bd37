use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use xraydx_core::data::{AugmentConfig, Dataset, LabelTable};
use xraydx_core::model::{self, MiniDenseNet, ModelSpec, TaskKind};
use xraydx_core::optim::LrFinderConfig;
use xraydx_core::train::{evaluate, find_lr, train_two_phase, Task, TrainConfig};

use crate::{split, table_bytes, write, TableArgs, TaskArgs, WeightingArgs};

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Network input side in pixels (images are resized to it)
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Fraction of the table held out for validation (0 disables)
    #[arg(long, default_value_t = 0.2)]
    valid_pct: f64,
    /// Mini-batch size
    #[arg(long, env = "XRAYDX_BATCH_SIZE", default_value_t = 64)]
    batch_size: usize,
}

fn build_model(task: Task, data: &Dataset, size: usize, seed: u64) -> Result<MiniDenseNet> {
    let labels = task.output_labels(&data.vocab);
    let kind = match task {
        Task::OneVsAll { .. } => TaskKind::OneVsAll,
        Task::MultiLabel => TaskKind::MultiLabel,
    };
    let spec = ModelSpec { input_size: size, ..ModelSpec::desk(labels.len()) };
    Ok(MiniDenseNet::build(spec, kind, labels, seed)?)
}

struct Split {
    train_rows: LabelTable,
    train: Dataset,
    valid: Option<(LabelTable, Dataset)>,
}

fn load(table: &TableArgs, m: &ModelArgs, seed: u64) -> Result<Split> {
    let full = table.read()?;
    let (train_rows, valid_rows) = split(&full, m.valid_pct, seed)?;
    let root = table.images.as_deref();
    let train = Dataset::load(&train_rows, root, m.size).context("loading training images")?;
    let valid = match valid_rows {
        Some(rows) => {
            let data = Dataset::load(&rows, root, m.size).context("loading validation images")?;
            Some((rows, data))
        }
        None => None,
    };
    Ok(Split { train_rows, train, valid })
}

#[derive(Debug, Args)]
pub struct LrFindArgs {
    #[command(flatten)]
    table: TableArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    weighting: WeightingArgs,
    /// Curve CSV to write (wd, lr, smoothed_loss)
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
    /// Smallest learning rate tried
    #[arg(long, env = "XRAYDX_LR_MIN", default_value_t = 1e-7)]
    lr_min: f64,
    /// Largest learning rate tried
    #[arg(long, env = "XRAYDX_LR_MAX", default_value_t = 10.0)]
    lr_max: f64,
    /// Geometric steps between them (steps + 1 mini-batches)
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Weight decays to sweep, comma-separated
    #[arg(long, env = "XRAYDX_WD", value_delimiter = ',', default_value = "0.001")]
    wd: Vec<f64>,
}

pub fn lr_find(a: LrFindArgs, seed: u64) -> Result<()> {
    let data = load(&a.table, &a.model, seed)?.train;
    let task = a.task.resolve(&data.vocab)?;
    let model = build_model(task, &data, a.model.size, seed)?;
    let finder = LrFinderConfig::new(a.lr_min, a.lr_max, a.steps);
    let mut csv = String::from("wd,lr,smoothed_loss\n");
    for &wd in &a.wd {
        let config = TrainConfig {
            weight_decay: wd,
            batch_size: a.model.batch_size,
            seed,
            weighting: a.weighting.resolve(),
            ..TrainConfig::new(task)
        };
        let result = find_lr(&model, &data, &config, &finder).with_context(|| format!("range test at wd {wd}"))?;
        for (lr, loss) in &result.points {
            csv.push_str(&format!("{wd:e},{lr:e},{loss}\n"));
        }
        match result.suggested_lr {
            Some(lr) => println!("wd {wd:e}: steepest descent at lr {lr:.3e}"),
            None => println!("wd {wd:e}: loss never descended"),
        }
    }
    write(&a.out, csv)?;
    println!("curve -> {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    table: TableArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    weighting: WeightingArgs,
    /// Output directory (weights, history, split tables, report)
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
    /// Phase-1 epochs, all layers trainable
    #[arg(long, env = "XRAYDX_EPOCHS", default_value_t = 30)]
    epochs: usize,
    /// Phase-2 epochs with the body frozen (0 skips the phase)
    #[arg(long, default_value_t = 5)]
    epochs_phase2: usize,
    /// Low end of the phase-1 one-cycle range; phase 2 uses a tenth
    #[arg(long, env = "XRAYDX_LR_MIN", default_value_t = 1.32e-2)]
    lr_min: f64,
    /// Peak of the phase-1 one-cycle range
    #[arg(long, env = "XRAYDX_LR_MAX", default_value_t = 1e-1)]
    lr_max: f64,
    /// Weight decay applied once per epoch
    #[arg(long, env = "XRAYDX_WD", default_value_t = 1e-3)]
    wd: f64,
    /// Fraction of each phase spent warming up
    #[arg(long, default_value_t = 0.3)]
    warmup: f64,
    /// Random rotation, zoom and lighting on training batches
    #[arg(long)]
    augment: bool,
}

pub fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let Split { train_rows, train: data, valid } = load(&a.table, &a.model, seed)?;
    let task = a.task.resolve(&data.vocab)?;
    let mut config = TrainConfig::new(task).with_lr((a.lr_min, a.lr_max));
    config.epochs_phase1 = a.epochs;
    config.epochs_phase2 = a.epochs_phase2;
    config.weight_decay = a.wd;
    config.warmup_fraction = a.warmup;
    config.batch_size = a.model.batch_size;
    config.seed = seed;
    config.weighting = a.weighting.resolve();
    config.augment = a.augment.then(|| AugmentConfig { seed, ..AugmentConfig::default() });

    let mut model = build_model(task, &data, a.model.size, seed)?;
    let outcome = train_two_phase(&mut model, &data, &config)?;
    let out = &a.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    model::save(&model, out.join("model.weights"))?;
    model::save(&outcome.phase1, out.join("phase1.weights"))?;
    write(&out.join("history.csv"), outcome.history.to_csv())?;
    println!(
        "trained on {} images, {} iterations in {:.1}s -> {}",
        data.len(),
        outcome.history.rows.len(),
        outcome.elapsed_s,
        out.join("model.weights").display()
    );

    write(&out.join("split").join("train.csv"), table_bytes(&train_rows)?)?;
    if let Some((valid_rows, valid)) = valid {
        write(&out.join("split").join("valid.csv"), table_bytes(&valid_rows)?)?;
        let mut report = evaluate(&model, &valid, task)?;
        // timings vary run to run; keeping them out makes the file reproducible
        report.wall_time_s = 0.0;
        report.config = Some(serde_json::json!({
            "train": config,
            "augment": a.augment,
            "model": model.spec(),
            "valid_pct": a.model.valid_pct,
        }));
        write(&out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        println!(
            "validation ({} images): macro AUC {}, micro AUC {}",
            valid.len(),
            fmt(report.macro_auc()),
            fmt(report.micro_auc())
        );
    }
    Ok(())
}
