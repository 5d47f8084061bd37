use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{ArgGroup, Args};
use xraydx_core::data::{Dataset, LabelTable, Vocabulary};
use xraydx_core::metrics::{iso_f1_curves, F1Average};
use xraydx_core::model::{self, MiniDenseNet, TaskKind};
use xraydx_core::train::{evaluate_scores, predict_dataset, task_truth, EvalReport, Task};
use xraydx_service::LoadedModel;

use crate::{slug, write, TableArgs, TaskArgs};

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["weights", "scores"])))]
pub struct EvalArgs {
    #[command(flatten)]
    table: TableArgs,
    /// Weight file to score the table with
    #[arg(long, env = "XRAYDX_WEIGHTS")]
    weights: Option<PathBuf>,
    /// Score CSV to evaluate instead of a model: a `path` column plus one
    /// column per output (for one-vs-all the positive column suffices)
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
    /// Output directory (report.json, scores.csv, curves/)
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
}

/// The task a stored model solves, in terms of `vocab`.
fn model_task(model: &MiniDenseNet, vocab: &Vocabulary) -> Result<Task> {
    let labels = model.labels();
    match model.task() {
        TaskKind::MultiLabel => {
            let same = labels.len() == vocab.len() && labels.iter().enumerate().all(|(i, l)| vocab.index_of(l) == Some(i));
            ensure!(same, "model labels [{}] differ from the table's [{}]", labels.join(", "), vocab.names().join(", "));
            Ok(Task::MultiLabel)
        }
        TaskKind::OneVsAll => {
            let positive = vocab
                .index_of(&labels[1])
                .with_context(|| format!("the model's positive label {:?} is not in the table", labels[1]))?;
            Ok(Task::OneVsAll { positive })
        }
    }
}

fn same_label(a: &str, b: &str) -> bool {
    a.trim().replace('_', " ").eq_ignore_ascii_case(&b.trim().replace('_', " "))
}

/// Score rows aligned with `table`, one column per entry of `classes`.
fn read_scores(path: &Path, table: &LabelTable, classes: &[String], task: Task) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| same_label(h, name));
    let path_col = col("path").context("score CSV needs a `path` column")?;
    let mut cols: Vec<Option<usize>> = classes.iter().map(|c| col(c)).collect();
    // a lone positive column stands for the pair
    let derive_others = matches!(task, Task::OneVsAll { .. }) && cols[0].is_none() && cols[1].is_some();
    if derive_others {
        cols[0] = cols[1];
    }
    if let Some(i) = cols.iter().position(Option::is_none) {
        bail!("score CSV has no column for {:?}", classes[i]);
    }
    let mut by_path: HashMap<String, Vec<f64>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|c| {
                let cell = rec.get(c.unwrap()).unwrap_or("");
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .with_context(|| format!("score CSV row {}: bad score {cell:?}", line + 2))
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut row = row;
        if derive_others {
            row[0] = 1.0 - row[1];
        }
        by_path.insert(rec.get(path_col).unwrap_or("").to_string(), row);
    }
    table
        .rows
        .iter()
        .map(|r| by_path.remove(&r.path).with_context(|| format!("score CSV has no row for {}", r.path)))
        .collect()
}

fn scores_csv(paths: &[String], classes: &[String], scores: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(std::iter::once("path").chain(classes.iter().map(String::as_str)))?;
    for (p, row) in paths.iter().zip(scores) {
        w.write_record(std::iter::once(p.clone()).chain(row.iter().map(f64::to_string)))?;
    }
    Ok(w.into_inner()?)
}

fn write_curves(dir: &Path, report: &EvalReport) -> Result<()> {
    for c in &report.per_class {
        if let Some(roc) = &c.roc {
            write(&dir.join(format!("roc_{}.csv", slug(&c.name))), roc.to_csv())?;
        }
        if let Some(pr) = &c.pr {
            write(&dir.join(format!("pr_{}.csv", slug(&c.name))), pr.to_csv())?;
        }
    }
    for (name, curve) in [("roc_micro", &report.roc_micro), ("roc_macro", &report.roc_macro), ("pr_micro", &report.pr_micro)] {
        if let Some(c) = curve {
            write(&dir.join(format!("{name}.csv")), c.to_csv())?;
        }
    }
    let mut iso = String::from("f,recall,precision\n");
    for c in iso_f1_curves(&[0.2, 0.4, 0.6, 0.8], 50) {
        for p in &c.points {
            iso.push_str(&format!("{},{},{}\n", c.summary, p.x, p.y));
        }
    }
    write(&dir.join("iso_f1.csv"), iso)
}

fn print_summary(report: &EvalReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!("{:<22} {:>7} {:>7} {:>7} {:>7}", "class", "support", "AUC", "AP", "F1");
    for c in &report.per_class {
        println!("{:<22} {:>7} {:>7} {:>7} {:>7.4}", c.name, c.support, opt(c.auc), opt(c.ap), c.f1);
    }
    println!("macro AUC {}, micro AUC {}", opt(report.macro_auc()), opt(report.micro_auc()));
    for f in report.f1.iter().filter(|f| f.average != F1Average::None) {
        println!("F1 {:?}: {}", f.average, opt(f.value));
    }
    for u in &report.undefined {
        println!("undefined: {u}");
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let table = a.table.read()?;
    let paths: Vec<String> = table.rows.iter().map(|r| r.path.clone()).collect();
    let (task, classes, scores) = if let Some(w) = &a.weights {
        let model = model::load(w).with_context(|| format!("loading {}", w.display()))?;
        let task = model_task(&model, &table.vocab)?;
        if a.task.task.is_some() {
            ensure!(a.task.resolve(&table.vocab)? == task, "--task disagrees with the model in {}", w.display());
        }
        let data = Dataset::load(&table, a.table.images.as_deref(), model.spec().input_size)?;
        let scores = predict_dataset(&model, &data, 64)?;
        (task, model.labels().to_vec(), scores)
    } else {
        let path = a.scores.as_deref().expect("clap requires weights or scores");
        let task = a.task.resolve(&table.vocab)?;
        let classes = task.output_labels(&table.vocab);
        let scores = read_scores(path, &table, &classes, task)?;
        (task, classes, scores)
    };
    let targets: Vec<Vec<u8>> = table.rows.iter().map(|r| r.one_hot.clone()).collect();
    let mut report = evaluate_scores(&scores, &task_truth(task, &targets), &classes, task)?;
    report.wall_time_s = 0.0;

    write(&a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write(&a.out.join("scores.csv"), scores_csv(&paths, &classes, &scores)?)?;
    write_curves(&a.out.join("curves"), &report)?;
    print_summary(&report);
    println!("report -> {}", a.out.join("report.json").display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    /// Weight file
    #[arg(long, env = "XRAYDX_WEIGHTS")]
    weights: PathBuf,
    /// Image to explain (PNG or JPEG); repeat for several
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
    /// Class to explain; defaults to each image's top prediction
    #[arg(long)]
    class: Option<String>,
    /// Heat-map opacity in the overlay
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    /// Output directory (`<image>_<class>.png` and `.csv`)
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
}

pub fn gradcam(a: GradcamArgs) -> Result<()> {
    ensure!((0.0..=1.0).contains(&a.alpha), "--alpha must lie in [0, 1]");
    let model = LoadedModel::from_file(&a.weights, None)?;
    let fixed = match &a.class {
        Some(name) => Some(
            model
                .class_index(name)
                .with_context(|| format!("unknown class {name:?}; the model knows {}", model.labels().join(", ")))?,
        ),
        None => None,
    };
    for path in &a.images {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let ranked = model.predict(&bytes, u32::MAX).with_context(|| path.display().to_string())?;
        let class = match fixed {
            Some(c) => c,
            None => model.class_index(&ranked[0].name).expect("predicted label belongs to the model"),
        };
        let (heat, png) = model.explain(&bytes, class, a.alpha, u32::MAX)?;
        let stem = path.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
        let base = format!("{stem}_{}", slug(&model.labels()[class]));
        write(&a.out.join(format!("{base}.png")), png)?;
        write(&a.out.join(format!("{base}.csv")), heat.to_csv())?;
        let top: Vec<String> = ranked.iter().take(3).map(|s| format!("{} {:.3}", s.name, s.probability)).collect();
        println!("{}: {}; explained {} -> {}", path.display(), top.join(", "), model.labels()[class], a.out.join(base).display());
    }
    Ok(())
}
