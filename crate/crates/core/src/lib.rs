//! Loss-landscape analysis for a small transformer encoder.
//!
//! The crate bundles a tiny masked-token-pretrainable encoder, Adam training
//! loops that checkpoint every epoch, synthetic tasks, and the landscape
//! probes built on top of them: interpolation curves, normalized 2D loss and
//! error surfaces, projected trajectories, layer-group surfaces, rollback
//! tables, and flatness widths.

pub mod data;
pub mod error;
pub mod experiment;
pub mod landscape;
pub mod model;
mod num;
pub mod param;
pub mod render;
pub mod train;

pub use error::{Error, Result};
