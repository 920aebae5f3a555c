//! Constrained image-deblurring experiments comparing TV and cLiGME models.
//!
//! A piecewise-constant phantom is blurred, corrupted by Gaussian noise at a
//! fixed SNR and recovered under four combinations of prior-knowledge
//! constraints (none, pixel-range box, constant background, both).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod scene;

pub use config::{ConstraintCase, ExperimentConfig, Model};
pub use error::{HarnessError, Result};
pub use experiment::{Experiment, SweepRow, TrialResult, TrialsSummary};
