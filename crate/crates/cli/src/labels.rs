use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use xraydx_core::data::{build_label_table, cooccurrence_matrix, filter_diseased, parse_metadata, Vocabulary};

use crate::{parse_vocab, read_table, split, table_bytes, write};

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Source metadata CSV ("Image Index", "Finding Labels", ...)
    #[arg(long, env = "XRAYDX_METADATA")]
    metadata: PathBuf,
    /// Image directory; only used to warn about missing files
    #[arg(long, env = "XRAYDX_IMAGES")]
    images: Option<PathBuf>,
    /// Label CSV to write
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
    /// Label vocabulary: chest, synth, or a comma-separated list
    #[arg(long, default_value = "chest", value_parser = parse_vocab)]
    vocab: Vocabulary,
    /// Also write `<out>.train.csv` and `<out>.valid.csv` with this validation fraction
    #[arg(long)]
    split: Option<f64>,
}

pub fn prepare(a: PrepareArgs, seed: u64) -> Result<()> {
    let records = parse_metadata(&a.metadata, &a.vocab).with_context(|| format!("reading {}", a.metadata.display()))?;
    let total = records.len();
    let diseased = filter_diseased(records);
    // paths stay as written in the metadata, relative to --images
    let (table, _) = build_label_table(&diseased, None, &a.vocab)?;
    if let Some(root) = &a.images {
        let missing: Vec<&str> = table.rows.iter().map(|r| r.path.as_str()).filter(|p| !root.join(p).exists()).collect();
        for p in missing.iter().take(10) {
            tracing::warn!("missing image {}", root.join(p).display());
        }
        if missing.len() > 10 {
            tracing::warn!("{} more images missing", missing.len() - 10);
        }
    }
    write(&a.out, table_bytes(&table)?)?;
    println!("kept {} diseased of {total} records -> {}", table.len(), a.out.display());

    if let Some(pct) = a.split {
        let (train, valid) = split(&table, pct, seed)?;
        let valid = valid.context("--split must be above 0")?;
        for (part, t) in [("train", &train), ("valid", &valid)] {
            let path = a.out.with_extension(format!("{part}.csv"));
            write(&path, table_bytes(t)?)?;
            println!("{part}: {} rows -> {}", t.len(), path.display());
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CooccurArgs {
    /// Label CSV
    #[arg(long, env = "XRAYDX_LABELS")]
    labels: PathBuf,
    /// Matrix CSV to write
    #[arg(long, env = "XRAYDX_OUT")]
    out: PathBuf,
}

pub fn cooccur(a: CooccurArgs) -> Result<()> {
    let table = read_table(&a.labels)?;
    let m = cooccurrence_matrix(&table);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let names = table.vocab.names();
    w.write_record(std::iter::once("label").chain(names.iter().map(String::as_str)))?;
    for (name, row) in names.iter().zip(&m) {
        w.write_record(std::iter::once(name.clone()).chain(row.iter().map(u64::to_string)))?;
    }
    write(&a.out, w.into_inner()?)?;
    println!("{}x{} co-occurrence matrix over {} images -> {}", names.len(), names.len(), table.len(), a.out.display());
    Ok(())
}
