//! Covariance estimation from Bernoulli-masked observations.
//!
//! Each sample observes coordinate `i` of `x` independently with a known
//! probability `p_i`. This crate provides
//!
//! * the masking model and the unbiased estimator `Σ̂ = (1/T) Σ y yᵀ ⊙ Ξ†`
//!   ([`sampling`], [`estimator`]);
//! * error-bound diagnostics built on the `H` matrix and the effective rank
//!   ([`bounds`]);
//! * budget-constrained design of `p` and the batch active estimation loop
//!   that redesigns `p` from its own running estimate ([`design`], [`active`]);
//! * synthetic and IDX-file data sources ([`data`]) and a multi-trial
//!   experiment harness with CSV output ([`experiment`]).

pub mod active;
pub mod bounds;
pub mod data;
pub mod design;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod rng;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};
pub use estimator::{estimate_cov, merge_estimates, relative_frobenius_error, CovarianceEstimate};
pub use sampling::{MaskDistribution, MaskedSample};
