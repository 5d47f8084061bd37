//! Chest X-ray multi-label diagnosis pipeline at desk scale.
//!
//! The crate is organised bottom-up: [`autograd`] is the differentiation
//! engine, [`model`] builds the MiniDenseNet on top of it, [`losses`] and
//! [`optim`] drive training, [`data`] ingests metadata and images,
//! [`metrics`] evaluates, [`gradcam`] explains and [`train`] ties it together.

pub mod autograd;
pub mod data;
pub mod gradcam;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod train;
