//! Recursive Bayesian classification of satellite image time series.
//!
//! An instantaneous per-pixel classifier (spectral index thresholds, a
//! Gaussian mixture, logistic regression or externally supplied posteriors)
//! is turned into an online classifier by carrying a per-pixel class
//! posterior from one date to the next through a class transition model.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifiers;
mod codec;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod experiment;
mod parallel;
pub mod pipeline;
pub mod recursion;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
