//! A small reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]s (row-major `f64`). A [`Tape`] records every
//! operation applied to its [`Var`] handles; [`Tape::backward`] replays the
//! recorded gradient rules in reverse order. The operation menu is fixed to
//! what a DenseNet-style classifier needs: convolution, batch normalization,
//! pooling, affine layers, dropout and a few elementwise functions.

mod conv;
mod elementwise;
mod gemm;
pub mod gradcheck;
mod linear;
mod norm;
mod pool;
mod tape;
mod tensor;

pub use conv::conv_output_extent;
pub use elementwise::sigmoid;
pub use norm::BatchStats;
pub use tape::{Backward, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Train/eval switch shared by batch norm, dropout and the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: String,
        got: String,
    },
    #[error("{op}: degenerate batch, need at least 2 values per channel in train mode")]
    DegenerateBatch { op: &'static str },
    #[error("{op}: invalid parameter: {msg}")]
    Parameter { op: &'static str, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{op}: index {index} out of range 0..{len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err(
    op: &'static str,
    axis: impl Into<String>,
    expected: impl ToString,
    got: impl ToString,
) -> TensorError {
    TensorError::Dimension {
        op,
        axis: axis.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
