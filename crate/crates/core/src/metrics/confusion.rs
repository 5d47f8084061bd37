use serde::{Deserialize, Serialize};

use super::{check_len, MetricsError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// `a / b`, with 0/0 read as 0.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

fn check_binary(truth: &[u8]) -> Result<()> {
    match truth.iter().find(|&&t| t > 1) {
        Some(&t) => Err(MetricsError::NonBinary(t)),
        None => Ok(()),
    }
}

/// Counts at `threshold`; a score at or above it is a positive call.
pub fn confusion(scores: &[f64], truth: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_len("scores", truth.len(), scores.len())?;
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    confusion_from_predictions(&pred, truth)
}

pub fn confusion_from_predictions(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    check_len("predictions", truth.len(), pred.len())?;
    check_binary(truth)?;
    check_binary(pred)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Indicator matrix of `score >= threshold`.
pub fn threshold_matrix(scores: &[Vec<f64>], threshold: f64) -> Vec<Vec<u8>> {
    scores.iter().map(|row| row.iter().map(|&s| u8::from(s >= threshold)).collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    /// F1 of one class of a two-class problem.
    Binary { positive: usize },
    /// Pool every (sample, class) decision.
    Micro,
    /// Unweighted mean of per-class F1.
    Macro,
    /// Per-class F1 weighted by true-instance support.
    Weighted,
    /// Mean of per-sample F1 over label sets (multi-label only).
    Samples,
    /// Per-class values, no averaging.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub average: F1Average,
    /// Averaged score; absent for [`F1Average::None`].
    pub value: Option<f64>,
    pub per_class: Vec<f64>,
    /// Weighted count of true instances per class.
    pub support: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn macro_average(per_class: &[f64]) -> f64 {
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

/// One weight per sample from per-class weights: the weight of the sample's
/// positive class, the mean over its positive classes when it has several,
/// and 1 when it has none.
pub fn sample_weights_from_classes(truth: &[Vec<u8>], class_weights: &[f64]) -> Vec<f64> {
    truth
        .iter()
        .map(|row| {
            let ws: Vec<f64> = row.iter().zip(class_weights).filter(|(&t, _)| t == 1).map(|(_, &w)| w).collect();
            if ws.is_empty() {
                1.0
            } else {
                ws.iter().sum::<f64>() / ws.len() as f64
            }
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct Weighted {
    tp: f64,
    fp: f64,
    fn_: f64,
}

/// F1 over indicator matrices `pred` and `truth`, both `[N][C]`.
pub fn f1_score(pred: &[Vec<u8>], truth: &[Vec<u8>], average: F1Average, sample_weight: Option<&[f64]>) -> Result<F1Report> {
    check_len("prediction rows", truth.len(), pred.len())?;
    let n = truth.len();
    if n == 0 {
        return Err(MetricsError::InvalidMode("F1 over zero samples".into()));
    }
    let c = truth[0].len();
    for (p, t) in pred.iter().zip(truth) {
        check_len("truth row", c, t.len())?;
        check_len("prediction row", c, p.len())?;
        check_binary(t)?;
        check_binary(p)?;
    }
    if let Some(w) = sample_weight {
        check_len("sample weights", n, w.len())?;
    }
    match average {
        F1Average::Binary { positive } if c != 2 || positive >= 2 => {
            return Err(MetricsError::InvalidMode(format!(
                "binary averaging needs 2 classes and positive < 2 (got {c} classes, positive {positive})"
            )))
        }
        F1Average::Samples if c < 2 => {
            return Err(MetricsError::InvalidMode("samples averaging needs a multi-label problem".into()))
        }
        _ => {}
    }
    let weight = |i: usize| sample_weight.map_or(1.0, |w| w[i]);

    let mut counts = vec![Weighted::default(); c];
    let mut support = vec![0.0; c];
    for i in 0..n {
        let w = weight(i);
        for k in 0..c {
            let (p, t) = (pred[i][k], truth[i][k]);
            match (p, t) {
                (1, 1) => counts[k].tp += w,
                (1, 0) => counts[k].fp += w,
                (0, 1) => counts[k].fn_ += w,
                _ => {}
            }
            support[k] += w * t as f64;
        }
    }
    let mut warnings = Vec::new();
    let mut f1_of = |wc: &Weighted, label: &str| {
        if wc.tp + wc.fp == 0.0 {
            warnings.push(format!("{label}: precision is 0/0, taken as 0"));
        }
        if wc.tp + wc.fn_ == 0.0 {
            warnings.push(format!("{label}: recall is 0/0, taken as 0"));
        }
        harmonic(ratio(wc.tp, wc.tp + wc.fp), ratio(wc.tp, wc.tp + wc.fn_))
    };
    let per_class: Vec<f64> = counts.iter().enumerate().map(|(k, wc)| f1_of(wc, &format!("class {k}"))).collect();

    let value = match average {
        F1Average::None => None,
        F1Average::Binary { positive } => Some(per_class[positive]),
        F1Average::Macro => Some(macro_average(&per_class)),
        F1Average::Weighted => {
            let total: f64 = support.iter().sum();
            if total == 0.0 {
                warnings.push("weighted F1: no true instances, taken as 0".into());
            }
            Some(ratio(per_class.iter().zip(&support).map(|(f, s)| f * s).sum(), total))
        }
        F1Average::Micro => {
            let pooled = counts.iter().fold(Weighted::default(), |a, b| Weighted {
                tp: a.tp + b.tp,
                fp: a.fp + b.fp,
                fn_: a.fn_ + b.fn_,
            });
            Some(f1_of(&pooled, "micro"))
        }
        F1Average::Samples => {
            let mut total = 0.0;
            let mut wsum = 0.0;
            let mut empty = 0;
            for i in 0..n {
                let inter = pred[i].iter().zip(&truth[i]).filter(|(&p, &t)| p == 1 && t == 1).count() as f64;
                let sizes = pred[i].iter().chain(&truth[i]).map(|&v| v as f64).sum::<f64>();
                if sizes == 0.0 {
                    empty += 1;
                }
                total += weight(i) * ratio(2.0 * inter, sizes);
                wsum += weight(i);
            }
            if empty > 0 {
                warnings.push(format!("{empty} samples with empty predicted and true label sets scored 0"));
            }
            Some(ratio(total, wsum))
        }
    };
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(F1Report { average, value, per_class, support, warnings })
}
