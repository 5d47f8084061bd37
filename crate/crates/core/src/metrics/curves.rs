use serde::{Deserialize, Serialize};

use super::{check_len, MetricsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// Score threshold producing the point; absent for synthetic points such
    /// as the ROC origin or averaged curves.
    pub threshold: Option<f64>,
}

/// ROC: x = false positive rate, y = true positive rate, summary = AUC.
/// PR: x = recall, y = precision, summary = average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
    pub summary: f64,
}

impl CurveData {
    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    /// `x,y,threshold` rows; an absent threshold is an empty cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,threshold\n");
        for p in &self.points {
            let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", p.x, p.y, t));
        }
        s
    }
}

fn trapezoid(points: &[CurvePoint]) -> f64 {
    points.windows(2).map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0).sum()
}

/// Cumulative (tp, fp) after each block of equal scores, scores descending.
fn sweep(scores: &[f64], truth: &[u8]) -> Result<Vec<(f64, f64, f64)>> {
    check_len("scores", truth.len(), scores.len())?;
    if let Some(&t) = truth.iter().find(|&&t| t > 1) {
        return Err(MetricsError::NonBinary(t));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((s, tp, fp));
    }
    Ok(out)
}

/// ROC curve with one point per distinct score; tied scores form a single
/// step so the trapezoid area equals the Mann-Whitney statistic.
pub fn roc_curve(scores: &[f64], truth: &[u8]) -> Result<CurveData> {
    let steps = sweep(scores, truth)?;
    let pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    let neg = truth.len() as f64 - pos;
    if pos == 0.0 {
        return Err(MetricsError::SingleClass(0));
    }
    if neg == 0.0 {
        return Err(MetricsError::SingleClass(1));
    }
    let mut points = vec![CurvePoint { x: 0.0, y: 0.0, threshold: None }];
    points.extend(steps.iter().map(|&(s, tp, fp)| CurvePoint { x: fp / neg, y: tp / pos, threshold: Some(s) }));
    let summary = trapezoid(&points);
    Ok(CurveData { kind: CurveKind::Roc, points, summary })
}

fn flatten(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> Result<(Vec<f64>, Vec<u8>)> {
    check_len("score rows", truth.len(), scores.len())?;
    for (s, t) in scores.iter().zip(truth) {
        check_len("score row", t.len(), s.len())?;
    }
    Ok((scores.concat(), truth.concat()))
}

/// Every (sample, class) cell treated as one binary decision.
pub fn roc_micro(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> Result<CurveData> {
    let (s, t) = flatten(scores, truth)?;
    roc_curve(&s, &t)
}

pub fn pr_micro(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> Result<CurveData> {
    let (s, t) = flatten(scores, truth)?;
    pr_curve(&s, &t)
}

/// Linear interpolation of a curve with non-decreasing x. Where x repeats
/// (vertical steps) the last, highest, y is taken.
fn interp(x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let j = xs.partition_point(|&v| v <= x);
    if j == 0 {
        return ys[0];
    }
    let j = j - 1;
    if xs[j] == x || j + 1 == xs.len() {
        return ys[j];
    }
    let t = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + t * (ys[j + 1] - ys[j])
}

/// Mean of per-class ROC curves on the union of their false positive
/// rates. `curves[k]` is `None` when class k's curve is undefined.
pub fn roc_macro(curves: &[Option<CurveData>]) -> Result<CurveData> {
    let undefined: Vec<usize> = curves.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(k, _)| k).collect();
    if !undefined.is_empty() {
        return Err(MetricsError::UndefinedClasses(undefined));
    }
    if curves.len() < 2 {
        return Err(MetricsError::InvalidMode("macro averaging needs at least 2 class curves".into()));
    }
    let curves: Vec<&CurveData> = curves.iter().flatten().collect();
    let mut all_fpr: Vec<f64> = curves.iter().flat_map(|c| c.xs()).collect();
    all_fpr.sort_by(f64::total_cmp);
    all_fpr.dedup();
    let mut points: Vec<CurvePoint> = all_fpr
        .iter()
        .map(|&x| {
            let y = curves.iter().map(|c| interp(x, &c.xs(), &c.ys())).sum::<f64>() / curves.len() as f64;
            CurvePoint { x, y, threshold: None }
        })
        .collect();
    if points[0].y > 0.0 {
        points.insert(0, CurvePoint { x: 0.0, y: 0.0, threshold: None });
    }
    let summary = trapezoid(&points);
    Ok(CurveData { kind: CurveKind::Roc, points, summary })
}

/// Precision-recall curve, thresholds descending over distinct scores,
/// preceded by the (recall 0, precision 1) anchor.
pub fn pr_curve(scores: &[f64], truth: &[u8]) -> Result<CurveData> {
    let steps = sweep(scores, truth)?;
    let pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    if pos == 0.0 {
        return Err(MetricsError::NoPositives);
    }
    let mut points = vec![CurvePoint { x: 0.0, y: 1.0, threshold: None }];
    points.extend(
        steps
            .iter()
            .map(|&(s, tp, fp)| CurvePoint { x: tp / pos, y: tp / (tp + fp), threshold: Some(s) }),
    );
    let summary = average_precision(&points[1..]);
    Ok(CurveData { kind: CurveKind::Pr, points, summary })
}

/// `Σ (R_n - R_{n-1})·P_n` with `R_0 = 0`, over threshold points.
pub fn average_precision(points: &[CurvePoint]) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in points {
        ap += (p.x - prev) * p.y;
        prev = p.x;
    }
    ap
}

/// Points of constant F1 in (recall, precision) space:
/// `p = f·r / (2r - f)`, from `p = 1` at `r = f/(2-f)` to `r = 1`.
/// The summary holds the level.
pub fn iso_f1_curves(levels: &[f64], points_per_curve: usize) -> Vec<CurveData> {
    let n = points_per_curve.max(2);
    levels
        .iter()
        .filter(|&&f| f > 0.0 && f < 1.0)
        .map(|&f| {
            let r0 = f / (2.0 - f);
            let points = (0..n)
                .map(|i| {
                    let r = r0 + (1.0 - r0) * i as f64 / (n - 1) as f64;
                    let p = (f * r / (2.0 * r - f)).min(1.0);
                    CurvePoint { x: r, y: p, threshold: None }
                })
                .collect();
            CurveData { kind: CurveKind::Pr, points, summary: f }
        })
        .collect()
}
