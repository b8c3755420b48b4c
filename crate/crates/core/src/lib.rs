//! Spatiotemporal attentive neural process for sparse biomass observations,
//! with quantile-ensemble baselines and a calibration-focused evaluation
//! protocol verified against a synthetic world with known truth.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod anp;
pub mod baselines;
pub mod config;
pub mod container;
pub mod diffcore;
pub mod error;
pub mod evalcal;
pub mod pipeline;
pub(crate) mod rng;
pub mod synthworld;
pub mod training;

pub use error::{Error, Result};
