//! Portable weight file.
//!
//! ```text
//! XRAYDX-WEIGHTS
//! format-version: 1
//! dtype: f64le
//! task: multi-label
//! labels: Atelectasis|Cardiomegaly|...
//! spec.in_channels: 3
//! ...
//! input.mean: 0.01,0.01,0.01
//! input.std: 0.52,0.52,0.52
//! input.count: 8192000
//! tensor: body.stem.conv shape=16x3x7x7 offset=0 frozen=0
//! stats: body.stem.norm channels=16 offset=2352
//! payload-values: 123456
//! end-manifest
//! <payload-values little-endian IEEE-754 binary64 values>
//! ```
//!
//! Offsets count values from the start of the payload. A stats entry holds
//! `channels` means followed by `channels` variances.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ChannelStats, MiniDenseNet, ModelError, ModelSpec, Parameters, RunningStats, TaskKind};
use crate::autograd::Tensor;

pub const MAGIC: &str = "XRAYDX-WEIGHTS";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64le";
const END: &str = "end-manifest";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a weight file (bad magic line {0:?})")]
    BadMagic(String),
    #[error("unsupported format-version {found} (this build reads version {supported})")]
    Version { found: String, supported: u32 },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("payload truncated: manifest declares {expected} bytes, file has {got}")]
    Truncated { expected: usize, got: usize },
    #[error("weight file holds a {file}-class model but {requested} classes were requested")]
    ClassMismatch { file: usize, requested: usize },
    #[error("label {0:?} cannot be stored (contains '|' or a line break)")]
    BadLabel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save(model: &MiniDenseNet, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(FormatError::from)?;
    f.write_all(&bytes).map_err(FormatError::from)?;
    Ok(())
}

pub fn to_bytes(model: &MiniDenseNet) -> Result<Vec<u8>, ModelError> {
    for label in model.labels() {
        if label.contains('|') || label.contains('\n') || label.contains('\r') {
            return Err(FormatError::BadLabel(label.clone()).into());
        }
    }
    let spec = model.spec();
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "format-version: {FORMAT_VERSION}");
    let _ = writeln!(m, "dtype: {DTYPE}");
    let _ = writeln!(m, "task: {}", model.task().as_str());
    let _ = writeln!(m, "labels: {}", model.labels().join("|"));
    let _ = writeln!(m, "spec.in_channels: {}", spec.in_channels);
    let _ = writeln!(m, "spec.init_features: {}", spec.init_features);
    let _ = writeln!(m, "spec.growth_rate: {}", spec.growth_rate);
    let blocks: Vec<String> = spec.block_layers.iter().map(|b| b.to_string()).collect();
    let _ = writeln!(m, "spec.block_layers: {}", blocks.join(","));
    let _ = writeln!(m, "spec.num_classes: {}", spec.num_classes);
    let _ = writeln!(m, "spec.head_dropout: {}", spec.head_dropout);
    let _ = writeln!(m, "spec.head_hidden: {}", spec.head_hidden);
    let _ = writeln!(m, "spec.input_size: {}", spec.input_size);
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
    let stats = model.input_stats();
    let _ = writeln!(m, "input.mean: {}", list(&stats.mean));
    let _ = writeln!(m, "input.std: {}", list(&stats.std));
    let _ = writeln!(m, "input.count: {:?}", stats.count);

    let mut payload: Vec<f64> = Vec::with_capacity(model.params().numel());
    for p in model.params().iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            m,
            "tensor: {} shape={} offset={} frozen={}",
            p.name,
            shape.join("x"),
            payload.len(),
            u8::from(p.frozen)
        );
        payload.extend_from_slice(p.value.data());
    }
    for s in model.params().stats() {
        let _ = writeln!(m, "stats: {} channels={} offset={}", s.name, s.mean.len(), payload.len());
        payload.extend_from_slice(&s.mean);
        payload.extend_from_slice(&s.var);
    }
    let _ = writeln!(m, "payload-values: {}", payload.len());
    let _ = writeln!(m, "{END}");

    let mut bytes = m.into_bytes();
    bytes.reserve(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn load(path: impl AsRef<Path>) -> Result<MiniDenseNet, ModelError> {
    let bytes = std::fs::read(path).map_err(FormatError::from)?;
    from_bytes(&bytes)
}

/// Load and insist on a particular class count.
pub fn load_expecting(path: impl AsRef<Path>, classes: usize) -> Result<MiniDenseNet, ModelError> {
    let model = load(path)?;
    if model.spec().num_classes != classes {
        return Err(FormatError::ClassMismatch { file: model.spec().num_classes, requested: classes }.into());
    }
    Ok(model)
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    frozen: bool,
}

struct StatsEntry {
    name: String,
    channels: usize,
    offset: usize,
}

fn manifest_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Manifest { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, FormatError> {
    v.trim().parse().map_err(|_| manifest_err(line, format!("{key}: cannot parse {v:?}")))
}

/// `key=value` fields after the entry name.
fn fields<'a>(line: usize, parts: impl Iterator<Item = &'a str>) -> Result<Vec<(&'a str, &'a str)>, FormatError> {
    parts
        .map(|p| p.split_once('=').ok_or_else(|| manifest_err(line, format!("expected key=value, got {p:?}"))))
        .collect()
}

fn field<'a>(line: usize, fs: &[(&str, &'a str)], key: &str) -> Result<&'a str, FormatError> {
    fs.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| manifest_err(line, format!("missing {key}=")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<MiniDenseNet, ModelError> {
    let mut reader = bytes;
    let mut line_no = 0;
    let mut next_line = |reader: &mut &[u8]| -> Result<String, FormatError> {
        let mut buf = Vec::new();
        let n = reader.read_until(b'\n', &mut buf)?;
        line_no += 1;
        if n == 0 {
            return Err(manifest_err(line_no, "unexpected end of manifest"));
        }
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        String::from_utf8(buf).map_err(|_| manifest_err(line_no, "manifest is not UTF-8"))
    };

    let magic = next_line(&mut reader).map_err(|_| FormatError::BadMagic(String::new()))?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic.chars().take(32).collect()).into());
    }

    let mut kv: Vec<(usize, String, String)> = Vec::new();
    let mut tensors = Vec::new();
    let mut stats = Vec::new();
    let mut line = 1;
    loop {
        let text = next_line(&mut reader)?;
        line += 1;
        if text == END {
            break;
        }
        let (key, value) = text
            .split_once(": ")
            .ok_or_else(|| manifest_err(line, format!("expected 'key: value', got {text:?}")))?;
        match key {
            "tensor" => {
                let mut parts = value.split(' ');
                let name = parts.next().unwrap_or_default().to_string();
                let fs = fields(line, parts)?;
                let shape = field(line, &fs, "shape")?
                    .split('x')
                    .map(|d| parse_num(line, "shape", d))
                    .collect::<Result<Vec<usize>, _>>()?;
                let offset = parse_num(line, "offset", field(line, &fs, "offset")?)?;
                let frozen = match field(line, &fs, "frozen")? {
                    "0" => false,
                    "1" => true,
                    other => return Err(manifest_err(line, format!("frozen={other}")).into()),
                };
                tensors.push(TensorEntry { name, shape, offset, frozen });
            }
            "stats" => {
                let mut parts = value.split(' ');
                let name = parts.next().unwrap_or_default().to_string();
                let fs = fields(line, parts)?;
                let channels = parse_num(line, "channels", field(line, &fs, "channels")?)?;
                let offset = parse_num(line, "offset", field(line, &fs, "offset")?)?;
                stats.push(StatsEntry { name, channels, offset });
            }
            _ => kv.push((line, key.to_string(), value.to_string())),
        }
    }
    let get = |key: &str| -> Result<(usize, &str), FormatError> {
        kv.iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
            .ok_or_else(|| manifest_err(line, format!("missing key {key}")))
    };

    let (_, version) = get("format-version")?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(FormatError::Version { found: version.to_string(), supported: FORMAT_VERSION }.into());
    }
    let (l, dtype) = get("dtype")?;
    if dtype != DTYPE {
        return Err(manifest_err(l, format!("unsupported dtype {dtype}")).into());
    }
    let (l, task) = get("task")?;
    let task = TaskKind::parse(task).ok_or_else(|| manifest_err(l, format!("unknown task {task}")))?;
    let labels: Vec<String> = get("labels")?.1.split('|').map(str::to_string).collect();
    let num = |key: &str| -> Result<usize, FormatError> {
        let (l, v) = get(key)?;
        parse_num(l, key, v)
    };
    let (l, blocks) = get("spec.block_layers")?;
    let blocks: Vec<usize> = blocks.split(',').map(|b| parse_num(l, "spec.block_layers", b)).collect::<Result<_, _>>()?;
    let block_layers: [usize; 4] = blocks
        .try_into()
        .map_err(|_| manifest_err(l, "spec.block_layers needs 4 entries"))?;
    let (l, dropout) = get("spec.head_dropout")?;
    let spec = ModelSpec {
        in_channels: num("spec.in_channels")?,
        init_features: num("spec.init_features")?,
        growth_rate: num("spec.growth_rate")?,
        block_layers,
        num_classes: num("spec.num_classes")?,
        head_dropout: parse_num(l, "spec.head_dropout", dropout)?,
        head_hidden: num("spec.head_hidden")?,
        input_size: num("spec.input_size")?,
    };
    let floats = |key: &str| -> Result<Vec<f64>, FormatError> {
        let (l, v) = get(key)?;
        v.split(',').map(|x| parse_num(l, key, x)).collect()
    };
    let (l, count) = get("input.count")?;
    let input_stats = ChannelStats { mean: floats("input.mean")?, std: floats("input.std")?, count: parse_num(l, "input.count", count)? };
    if input_stats.mean.len() != input_stats.std.len() {
        return Err(manifest_err(l, "input.mean and input.std lengths differ").into());
    }
    let payload_values = num("payload-values")?;

    let expected = payload_values * 8;
    if reader.len() < expected {
        return Err(FormatError::Truncated { expected, got: reader.len() }.into());
    }
    let mut raw = Vec::with_capacity(payload_values);
    let mut buf = [0u8; 8];
    for _ in 0..payload_values {
        reader.read_exact(&mut buf).map_err(FormatError::from)?;
        raw.push(f64::from_le_bytes(buf));
    }
    let slice = |name: &str, offset: usize, len: usize| -> Result<&[f64], FormatError> {
        raw.get(offset..offset + len)
            .ok_or_else(|| manifest_err(0, format!("{name}: offset {offset}+{len} beyond payload")))
    };

    let mut params = Parameters::default();
    for t in &tensors {
        let n: usize = t.shape.iter().product();
        let values = slice(&t.name, t.offset, n)?.to_vec();
        let value = Tensor::new(t.shape.clone(), values).map_err(|e| manifest_err(0, format!("{}: {e}", t.name)))?;
        params.push(t.name.clone(), value);
        params.get_mut(&t.name).expect("just pushed").frozen = t.frozen;
    }
    for s in &stats {
        let values = slice(&s.name, s.offset, 2 * s.channels)?;
        params.push_stats_values(RunningStats {
            name: s.name.clone(),
            mean: values[..s.channels].to_vec(),
            var: values[s.channels..].to_vec(),
        });
    }
    MiniDenseNet::from_parts(spec, task, labels, params, input_stats)
}
