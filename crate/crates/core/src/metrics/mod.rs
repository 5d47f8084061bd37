//! Confusion-based scores, F1 averaging modes, ROC/AUC (per class, micro,
//! macro), precision-recall curves with average precision, and iso-F1
//! reference curves.

mod confusion;
mod curves;

pub use confusion::{
    confusion, confusion_from_predictions, f1_score, macro_average, sample_weights_from_classes, threshold_matrix,
    ConfusionCounts, F1Average, F1Report,
};
pub use curves::{
    average_precision, iso_f1_curves, pr_curve, pr_micro, roc_curve, roc_macro, roc_micro, CurveData, CurveKind,
    CurvePoint,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("ROC curve undefined: truth contains only {0}s")]
    SingleClass(u8),
    #[error("average precision undefined: no positive samples")]
    NoPositives,
    #[error("{0}")]
    InvalidMode(String),
    #[error("curves undefined for classes {0:?}")]
    UndefinedClasses(Vec<usize>),
    #[error("truth values must be 0 or 1, found {0}")]
    NonBinary(u8),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(MetricsError::Length { what, expected, got })
    }
}
