//! Semi-supervised multi-label learning toolkit.
//!
//! A few fully annotated instances, many unlabeled ones, and several labels
//! per instance. The crate provides:
//!
//! * [`thresholding`]: per-class pseudo-label thresholds chosen by grid search
//!   on labeled data to maximize a metric (F-beta, precision or recall), plus
//!   class-proportion, fixed and top-k baselines;
//! * [`d2l`]: dual-decoupled heads: whole-instance and per-patch predictions
//!   fused by a temperature softmax, with separate heads for generating and
//!   consuming pseudo-labels;
//! * [`losses`], [`metrics`], [`ml`]: the numeric pieces underneath;
//! * [`data`] and [`harness`]: synthetic data and the end-to-end training
//!   loop, experiment runner and sweep comparisons;
//! * [`oracle`]: slow reference implementations the rest is checked against.

pub mod d2l;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod ml;
pub mod oracle;
pub mod thresholding;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/losses.md")]
    struct Losses;
    #[doc = include_str!("../../../book/src/d2l.md")]
    struct D2l;
    #[doc = include_str!("../../../book/src/thresholding.md")]
    struct Thresholding;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
