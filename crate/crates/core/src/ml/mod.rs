//! Numeric substrate: dense matrices, affine layers, the shared backbone,
//! AdamW with a one-cycle schedule, and parameter EMA.
//!
//! Gradients are derived by hand; there is no autodiff.

mod backbone;
mod ema;
mod linear;
mod matrix;
mod optim;
mod params;

pub use backbone::{Backbone, BackboneCache, BackboneSpec};
pub use ema::EmaState;
pub use linear::{linear_forward, sigmoid, sigmoid_scalar, LinearParams};
pub use matrix::{DenseMatrix, LabelMatrix, ScoreMatrix};
pub use optim::{AdamWConfig, OneCycle, OptimizerState};
pub use params::Parameters;
