//! Adaptive directed information (ADI) between multivariate time series.
//!
//! Instantaneous conditional mutual information is estimated from a
//! kernel-weighted time-varying Gaussian model, then smoothed by an expanding
//! fixed-shares ensemble of causal filters. The crate also ships the
//! trajectory ingest, pair pipeline, post-hoc analytics and a synthetic
//! harness that checks the ensemble's MSE bound.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod filters;
pub mod gaussian_mi;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
