//! Stochastic frontier estimation with high-dimensional variable selection.
//!
//! The crate implements the normal-half-normal frontier toolchain: corrected
//! OLS and maximum likelihood estimators, a partially penalized LASSO with
//! cross-validated and plug-in penalty rules, post-single and post-double
//! selection pipelines with optional cross-fitting, a seeded Monte Carlo
//! harness for the skewness-decay and sampling-distribution experiments, and
//! numerical verification of the Neyman-orthogonal moment conditions.

pub mod cols;
pub mod dist;
pub mod error;
pub mod lasso;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod montecarlo;
pub mod optim;
pub mod ortho;
pub mod selectors;

pub use error::{Error, Result};
