//! Adaptive ridge selector for sparse Bayesian linear regression.

pub mod aris;
pub mod baselines;
pub mod em;
pub mod error;
pub mod evidence;
pub mod experiment;
mod linalg;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod simgen;

pub use error::{ArisError, Result};
pub use model::{AriSFit, Dataset, FitOptions, Hyper, PosteriorState, Standardization};
