//! Gaussian copula models for mixed continuous, binary, ordinal, and
//! multinomial data with missing entries.
//!
//! The model is fit by direct maximum likelihood: every intractable
//! multivariate normal probability in the likelihood, its gradient, and
//! the conditional quantities used for imputation are approximated with
//! adaptive randomized quasi-Monte Carlo to a requested precision.
//! Missing cells are imputed with conditional means on the latent scale
//! (continuous variables) or full conditional category probabilities
//! (discrete variables).

pub mod data;
pub mod error;
pub mod estimator;
pub mod imputer;
pub mod io;
pub mod lattice;
pub mod likelihood;
pub mod marginals;
pub mod metrics;
pub mod model;
pub mod mvn;
pub mod norm;
pub mod simulate;

pub use error::{Error, Result};
