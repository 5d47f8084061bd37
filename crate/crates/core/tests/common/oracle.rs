//! Brute-force references the metric implementations are checked against.
//! Shared with the acceptance target.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xraydx_core::metrics::F1Average;

/// P(s+ > s-) + ½ P(s+ = s-) over all positive/negative pairs.
pub fn mann_whitney(scores: &[f64], truth: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if truth[i] == 1 && truth[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Scores and labels with both classes present; half the instances draw
/// scores from a coarse grid so ties are common.
pub fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..=50);
        let coarse = rng.random::<bool>();
        let truth: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let scores: Vec<f64> = truth
            .iter()
            .map(|&t| {
                let s = rng.random::<f64>() + 0.3 * f64::from(t);
                if coarse { (s * 5.0).floor() / 5.0 } else { s }
            })
            .collect();
        if truth.contains(&0) && truth.contains(&1) {
            return (scores, truth);
        }
    }
}

/// Σ (R_k − R_{k−1}) P_k over distinct thresholds, recomputed from scratch.
pub fn brute_ap(scores: &[f64], truth: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for th in thresholds {
        let tp = scores.iter().zip(truth).filter(|(&s, &t)| s >= th && t == 1).count() as f64;
        let pp = scores.iter().filter(|&&s| s >= th).count() as f64;
        let r = tp / pos;
        ap += (r - prev_r) * (tp / pp);
        prev_r = r;
    }
    ap
}

pub struct Counts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

pub fn counts(pred: &[Vec<u8>], truth: &[Vec<u8>], k: usize, w: &[f64]) -> Counts {
    let mut c = Counts { tp: 0.0, fp: 0.0, fn_: 0.0 };
    for i in 0..truth.len() {
        match (pred[i][k], truth[i][k]) {
            (1, 1) => c.tp += w[i],
            (1, 0) => c.fp += w[i],
            (0, 1) => c.fn_ += w[i],
            _ => {}
        }
    }
    c
}

pub fn f1_from(c: &Counts) -> f64 {
    // 2TP / (2TP + FP + FN), which equals the harmonic mean of precision and
    // recall whenever both are defined, and 0 otherwise
    let d = 2.0 * c.tp + c.fp + c.fn_;
    if c.tp == 0.0 || d == 0.0 { 0.0 } else { 2.0 * c.tp / d }
}

pub fn brute_f1(pred: &[Vec<u8>], truth: &[Vec<u8>], mode: F1Average, w: &[f64]) -> f64 {
    let classes = truth[0].len();
    let per: Vec<f64> = (0..classes).map(|k| f1_from(&counts(pred, truth, k, w))).collect();
    let support: Vec<f64> = (0..classes).map(|k| (0..truth.len()).map(|i| w[i] * f64::from(truth[i][k])).sum()).collect();
    match mode {
        F1Average::Binary { positive } => per[positive],
        F1Average::Micro => {
            let all: Vec<Counts> = (0..classes).map(|k| counts(pred, truth, k, w)).collect();
            f1_from(&Counts {
                tp: all.iter().map(|c| c.tp).sum(),
                fp: all.iter().map(|c| c.fp).sum(),
                fn_: all.iter().map(|c| c.fn_).sum(),
            })
        }
        F1Average::Macro => per.iter().sum::<f64>() / classes as f64,
        F1Average::Weighted => {
            let total: f64 = support.iter().sum();
            if total == 0.0 { 0.0 } else { per.iter().zip(&support).map(|(f, s)| f * s).sum::<f64>() / total }
        }
        F1Average::Samples => {
            let mut num = 0.0;
            for i in 0..truth.len() {
                let inter = (0..classes).filter(|&k| pred[i][k] == 1 && truth[i][k] == 1).count() as f64;
                let size = (0..classes).map(|k| f64::from(pred[i][k] + truth[i][k])).sum::<f64>();
                num += w[i] * if size == 0.0 { 0.0 } else { 2.0 * inter / size };
            }
            num / w.iter().sum::<f64>()
        }
        F1Average::None => unreachable!(),
    }
}

// Reference values for this fixture were produced with scikit-learn 1.7
// (roc_curve without dropping intermediate points, average_precision_score,
// and the interpolated macro recipe from its documentation).
pub fn fixture() -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
    let truth = vec![
        vec![1, 0, 1],
        vec![0, 1, 0],
        vec![1, 1, 0],
        vec![0, 0, 1],
        vec![1, 0, 0],
        vec![0, 1, 1],
        vec![0, 0, 0],
        vec![1, 0, 1],
    ];
    let scores = vec![
        vec![0.9, 0.2, 0.6],
        vec![0.3, 0.8, 0.4],
        vec![0.7, 0.6, 0.3],
        vec![0.4, 0.1, 0.9],
        vec![0.6, 0.3, 0.2],
        vec![0.2, 0.7, 0.5],
        vec![0.1, 0.4, 0.6],
        vec![0.8, 0.5, 0.7],
    ];
    (scores, truth)
}

pub fn column<T: Copy>(m: &[Vec<T>], k: usize) -> Vec<T> {
    m.iter().map(|r| r[k]).collect()
}


/// Random truth and prediction matrices with optional sample weights, as
/// `(pred, truth, weights, weighted)`.
pub fn f1_instance(rng: &mut ChaCha8Rng, index: usize) -> (Vec<Vec<u8>>, Vec<Vec<u8>>, Vec<f64>, bool) {
    let n = rng.random_range(1..40);
    let classes = rng.random_range(2..7);
    let density = rng.random_range(0.05..0.7);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<u8>> {
        (0..n).map(|_| (0..classes).map(|_| u8::from(rng.random::<f64>() < density)).collect()).collect()
    };
    let truth = draw(rng);
    let pred = draw(rng);
    let weighted = index % 2 == 1;
    let w: Vec<f64> = if weighted { (0..n).map(|_| rng.random_range(0.1..3.0)).collect() } else { vec![1.0; n] };
    (pred, truth, w, weighted)
}
