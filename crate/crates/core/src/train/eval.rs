use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Result, Task};
use crate::autograd::Tensor;
use crate::data::Dataset;
use crate::metrics::{
    f1_score, pr_curve, pr_micro, roc_curve, roc_macro, roc_micro, threshold_matrix, ConfusionCounts, CurveData,
    F1Average, F1Report, confusion_from_predictions,
};
use crate::model::MiniDenseNet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub support: usize,
    pub confusion: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub roc: Option<CurveData>,
    pub pr: Option<CurveData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub classes: Vec<String>,
    pub n_samples: usize,
    pub threshold: f64,
    pub per_class: Vec<ClassReport>,
    pub f1: Vec<F1Report>,
    pub roc_micro: Option<CurveData>,
    pub roc_macro: Option<CurveData>,
    pub pr_micro: Option<CurveData>,
    /// Curves that could not be computed, with the reason.
    pub undefined: Vec<String>,
    /// Echo of the training configuration, when known.
    pub config: Option<serde_json::Value>,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn macro_auc(&self) -> Option<f64> {
        self.roc_macro.as_ref().map(|c| c.summary)
    }

    pub fn micro_auc(&self) -> Option<f64> {
        self.roc_micro.as_ref().map(|c| c.summary)
    }

    pub fn f1(&self, average: F1Average) -> Option<f64> {
        self.f1.iter().find(|r| r.average == average).and_then(|r| r.value)
    }

    pub fn class(&self, name: &str) -> Option<&ClassReport> {
        self.per_class.iter().find(|c| c.name == name)
    }
}

/// Probability matrix for `data` (eval mode, stored input statistics).
pub fn predict_dataset(model: &MiniDenseNet, data: &Dataset, chunk: usize) -> Result<Vec<Vec<f64>>> {
    let mut scores = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(chunk.max(1)) {
        let end = (start + chunk).min(data.len());
        let batch = Tensor::stack(&data.images[start..end])?;
        let p = model.predict_raw(&batch)?;
        let c = p.shape()[1];
        scores.extend(p.data().chunks(c).map(<[f64]>::to_vec));
    }
    Ok(scores)
}

/// Truth in model-output form: `[others, positive]` rows for one-vs-all.
pub fn task_truth(task: Task, targets: &[Vec<u8>]) -> Vec<Vec<u8>> {
    match task {
        Task::OneVsAll { positive } => targets.iter().map(|t| vec![1 - t[positive], t[positive]]).collect(),
        Task::MultiLabel => targets.to_vec(),
    }
}

pub fn evaluate(model: &MiniDenseNet, data: &Dataset, task: Task) -> Result<EvalReport> {
    let start = Instant::now();
    let scores = predict_dataset(model, data, 64)?;
    let truth = task_truth(task, &data.targets);
    let mut report = evaluate_scores(&scores, &truth, model.labels(), task)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Assemble the report from a score matrix and a truth matrix already in
/// model-output form. Calls are positive at score ≥ 0.5; for one-vs-all this
/// equals the argmax of the softmax pair.
pub fn evaluate_scores(scores: &[Vec<f64>], truth: &[Vec<u8>], classes: &[String], task: Task) -> Result<EvalReport> {
    let start = Instant::now();
    let threshold = 0.5;
    let c = classes.len();
    let pred = threshold_matrix(scores, threshold);
    let column = |m: &[Vec<u8>], k: usize| m.iter().map(|r| r[k]).collect::<Vec<u8>>();
    let mut undefined = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    let mut rocs = Vec::with_capacity(c);
    for (k, name) in classes.iter().enumerate() {
        let t = column(truth, k);
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let confusion = confusion_from_predictions(&column(&pred, k), &t)?;
        let roc = roc_curve(&s, &t).map_err(|e| undefined.push(format!("{name} ROC: {e}"))).ok();
        let pr = pr_curve(&s, &t).map_err(|e| undefined.push(format!("{name} PR: {e}"))).ok();
        rocs.push(roc.clone());
        per_class.push(ClassReport {
            name: name.clone(),
            support: t.iter().filter(|&&v| v == 1).count(),
            confusion,
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            auc: roc.as_ref().map(|r| r.summary),
            ap: pr.as_ref().map(|r| r.summary),
            roc,
            pr,
        });
    }
    let mut modes = vec![F1Average::None, F1Average::Micro, F1Average::Macro, F1Average::Weighted];
    match task {
        Task::OneVsAll { .. } => modes.push(F1Average::Binary { positive: 1 }),
        Task::MultiLabel if c >= 2 => modes.push(F1Average::Samples),
        Task::MultiLabel => {}
    }
    let f1 = modes.into_iter().map(|m| f1_score(&pred, truth, m, None)).collect::<std::result::Result<Vec<_>, _>>()?;
    let roc_micro = roc_micro(scores, truth).map_err(|e| undefined.push(format!("micro ROC: {e}"))).ok();
    let pr_micro = pr_micro(scores, truth).map_err(|e| undefined.push(format!("micro PR: {e}"))).ok();
    let roc_macro = if c >= 2 {
        roc_macro(&rocs).map_err(|e| undefined.push(format!("macro ROC: {e}"))).ok()
    } else {
        None
    };
    Ok(EvalReport {
        task,
        classes: classes.to_vec(),
        n_samples: scores.len(),
        threshold,
        per_class,
        f1,
        roc_micro,
        roc_macro,
        pr_micro,
        undefined,
        config: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
