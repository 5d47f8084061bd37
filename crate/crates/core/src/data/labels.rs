use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result, CHEST_LABELS};

pub const NO_FINDING: &str = "No Finding";

const COL_INDEX: &str = "Image Index";
const COL_FINDINGS: &str = "Finding Labels";

/// Ordered label names; the order fixes one-hot column positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary(Vec<String>);

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(DataError::EmptyLabels);
        }
        let v = Self(names);
        for (i, n) in v.0.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(DataError::Parameter("label names must not be blank".into()));
            }
            if v.index_of(n) != Some(i) {
                return Err(DataError::Parameter(format!("label {n:?} appears twice")));
            }
        }
        Ok(v)
    }

    pub fn chest() -> Self {
        Self(CHEST_LABELS.iter().map(|s| s.to_string()).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Position of `name`; underscores and spaces are interchangeable
    /// (the source metadata spells `Pleural_Thickening`).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let norm = |s: &str| s.trim().replace('_', " ");
        let target = norm(name);
        self.0.iter().position(|n| norm(n) == target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetadataRecord {
    pub image_index: String,
    pub finding_labels: Vec<String>,
    pub patient_id: Option<String>,
    pub patient_age: Option<String>,
    pub patient_gender: Option<String>,
    pub view_position: Option<String>,
    /// Labels that are neither in the vocabulary nor `No Finding`.
    pub unknown_labels: Vec<String>,
}

impl MetadataRecord {
    pub fn is_healthy(&self) -> bool {
        self.finding_labels.iter().all(|l| l == NO_FINDING)
    }
}

/// Read a `Data_Entry_2017.csv`-style metadata file.
pub fn parse_metadata(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<MetadataRecord>> {
    let file = std::fs::File::open(path)?;
    parse_metadata_from(file, vocab)
}

pub fn parse_metadata_from(reader: impl Read, vocab: &Vocabulary) -> Result<Vec<MetadataRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let index_col = col(COL_INDEX).ok_or_else(|| DataError::MissingColumn(COL_INDEX.into()))?;
    let findings_col = col(COL_FINDINGS).ok_or_else(|| DataError::MissingColumn(COL_FINDINGS.into()))?;
    let optional = [col("Patient ID"), col("Patient Age"), col("Patient Gender"), col("View Position")];

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DataError::Row {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let image_index = row.get(index_col).unwrap_or("").trim().to_string();
        if image_index.is_empty() {
            return Err(DataError::Row { line, msg: "empty image index".into() });
        }
        let raw = row.get(findings_col).unwrap_or("").trim();
        if raw.is_empty() {
            return Err(DataError::Row { line, msg: format!("{image_index}: empty findings") });
        }
        let finding_labels: Vec<String> = raw.split('|').map(|s| s.trim().to_string()).collect();
        if finding_labels.iter().any(|l| l.is_empty()) {
            return Err(DataError::Row { line, msg: format!("{image_index}: empty label in {raw:?}") });
        }
        let unknown_labels = finding_labels
            .iter()
            .filter(|l| *l != NO_FINDING && vocab.index_of(l).is_none())
            .cloned()
            .collect();
        let opt = |c: Option<usize>| c.and_then(|c| row.get(c)).map(|s| s.trim().to_string());
        records.push(MetadataRecord {
            image_index,
            finding_labels,
            patient_id: opt(optional[0]),
            patient_age: opt(optional[1]),
            patient_gender: opt(optional[2]),
            view_position: opt(optional[3]),
            unknown_labels,
        });
    }
    Ok(records)
}

/// Keep records with at least one finding other than `No Finding`.
pub fn filter_diseased(records: Vec<MetadataRecord>) -> Vec<MetadataRecord> {
    records.into_iter().filter(|r| !r.is_healthy()).collect()
}

pub fn one_hot_encode(labels: &[impl AsRef<str>], vocab: &Vocabulary) -> Result<Vec<u8>> {
    if labels.is_empty() {
        return Err(DataError::EmptyLabels);
    }
    let mut v = vec![0u8; vocab.len()];
    for l in labels {
        let l = l.as_ref();
        let i = vocab.index_of(l).ok_or_else(|| DataError::UnknownLabel(l.to_string()))?;
        v[i] = 1;
    }
    Ok(v)
}

/// Names of the set positions, in vocabulary order.
pub fn one_hot_decode(one_hot: &[u8], vocab: &Vocabulary) -> Vec<String> {
    one_hot
        .iter()
        .zip(vocab.names())
        .filter(|(&b, _)| b == 1)
        .map(|(_, n)| n.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub path: String,
    pub findings: Vec<String>,
    pub one_hot: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub vocab: Vocabulary,
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One-hot column sums.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.len()];
        for r in &self.rows {
            for (c, &b) in counts.iter_mut().zip(&r.one_hot) {
                *c += b as usize;
            }
        }
        counts
    }

    fn subset(&self, idx: &[usize]) -> LabelTable {
        LabelTable { vocab: self.vocab.clone(), rows: idx.iter().map(|&i| self.rows[i].clone()).collect() }
    }
}

/// Build the label table. Rows whose image is missing under `images_root`
/// are kept and reported in the returned warning list.
pub fn build_label_table(
    records: &[MetadataRecord],
    images_root: Option<&Path>,
    vocab: &Vocabulary,
) -> Result<(LabelTable, Vec<String>)> {
    let mut rows = Vec::with_capacity(records.len());
    let mut warnings = Vec::new();
    for r in records {
        let one_hot = one_hot_encode(&r.finding_labels, vocab)?;
        let path = match images_root {
            Some(root) => {
                let p = root.join(&r.image_index);
                if !p.exists() {
                    warnings.push(format!("missing image {}", p.display()));
                }
                p.to_string_lossy().into_owned()
            }
            None => r.image_index.clone(),
        };
        // vocabulary spelling and order, whatever the metadata wrote
        let findings = one_hot_decode(&one_hot, vocab);
        rows.push(LabelRow { path, findings, one_hot });
    }
    Ok((LabelTable { vocab: vocab.clone(), rows }, warnings))
}

/// `path,findings,<one column per label>` with LF line endings.
pub fn write_label_csv(table: &LabelTable, writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["path".to_string(), "findings".to_string()];
    header.extend(table.vocab.names().iter().cloned());
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.path.clone(), r.findings.join("|")];
        rec.extend(r.one_hot.iter().map(|b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_label_csv(reader: impl Read) -> Result<LabelTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[0] != "path" || names[1] != "findings" {
        return Err(DataError::MissingColumn("path,findings,<labels...>".into()));
    }
    let vocab = Vocabulary::new(names[2..].iter().map(|s| s.to_string()).collect())?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let one_hot = rec
            .iter()
            .skip(2)
            .map(|v| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(DataError::Row { line, msg: format!("one-hot value {other:?}") }),
            })
            .collect::<Result<Vec<_>>>()?;
        if one_hot.len() != vocab.len() {
            return Err(DataError::Row { line, msg: format!("{} one-hot columns, expected {}", one_hot.len(), vocab.len()) });
        }
        let findings = rec[1].split('|').map(str::to_string).collect();
        rows.push(LabelRow { path: rec[0].to_string(), findings, one_hot });
    }
    Ok(LabelTable { vocab, rows })
}

/// `Yᵀ·Y` over the one-hot matrix.
pub fn cooccurrence_matrix(table: &LabelTable) -> Vec<Vec<u64>> {
    let k = table.vocab.len();
    let mut c = vec![vec![0u64; k]; k];
    for r in &table.rows {
        let on: Vec<usize> = r.one_hot.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect();
        for &i in &on {
            for &j in &on {
                c[i][j] += 1;
            }
        }
    }
    c
}

/// Seeded shuffle, then the first `floor(valid_pct · N)` rows become the
/// validation split.
pub fn split_train_valid(table: &LabelTable, valid_pct: f64, seed: u64) -> Result<(LabelTable, LabelTable)> {
    if !(valid_pct > 0.0 && valid_pct < 1.0) {
        return Err(DataError::Parameter(format!("valid_pct {valid_pct} outside (0, 1)")));
    }
    let n = table.len();
    if n < 2 {
        return Err(DataError::Parameter(format!("cannot split {n} rows")));
    }
    let n_valid = valid_count(n, valid_pct);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (valid, train) = idx.split_at(n_valid);
    Ok((table.subset(train), table.subset(valid)))
}

pub(crate) fn valid_count(n: usize, valid_pct: f64) -> usize {
    // the small bias absorbs representation error such as 0.2 * 10 = 1.999..
    ((valid_pct * n as f64) + 1e-9).floor() as usize
}
