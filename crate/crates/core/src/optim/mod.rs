//! Adam, per-epoch multiplicative weight decay, the one-cycle schedule and
//! the learning-rate range finder.

mod adam;
mod finder;
mod schedule;

pub use adam::{apply_weight_decay, decays, Adam, AdamConfig};
pub use finder::{lr_range_find, lr_sequence, LrFinderConfig, LrFinderResult};
pub use schedule::{OneCycle, ScheduleState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in {param}; step aborted")]
    NonFinite { param: String },
    #[error("{0}")]
    Parameter(String),
    #[error("loss diverged at the initial learning rate {lr:e}; try a smaller init_lr")]
    ImmediateDivergence { lr: f64 },
    #[error("step failed: {0}")]
    Step(String),
}

pub type Result<T> = std::result::Result<T, OptimError>;
