//! Learning the parameters of a high-dimensional Gaussian from samples
//! censored by known missing-not-at-random mechanisms.

pub mod audit;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod missingness;
pub mod normal1d;
pub mod rng;
pub mod self_censoring;
pub mod truncated_mle;

pub use error::{Error, Result};
