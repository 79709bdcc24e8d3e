//! Randomized quasi-Monte Carlo approximation of multivariate normal box
//! probabilities, truncated-normal expectations, and their gradients.

mod integrate;
mod reorder;

pub use integrate::{cdf_gradient, integrate, CdfGradient};
pub use reorder::reorder_and_factor;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration region: a box with per-coordinate bounds, infinities allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IntegrationBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !(a < b) {
                return Err(Error::Dimension(format!(
                    "box bound {j}: lower {a} must be < upper {b}"
                )));
            }
        }
        Ok(IntegrationBox { lower, upper })
    }

    /// The whole space in `k` dimensions.
    pub fn unbounded(k: usize) -> Self {
        IntegrationBox {
            lower: vec![f64::NEG_INFINITY; k],
            upper: vec![f64::INFINITY; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Mean and covariance of the latent normal being integrated.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(GaussianParams { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Standardized, reordered, and factored problem ready for the sampler.
///
/// `chol` is lower triangular with `chol * chol^T` equal to the permuted
/// covariance; bounds are permuted and mean-centered.
#[derive(Debug, Clone)]
pub struct ReorderedProblem {
    pub permutation: Vec<usize>,
    pub chol: DMatrix<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Permuted mean, needed to map standardized draws back to the
    /// original scale.
    pub mean: DVector<f64>,
}

/// Sampling budget and stopping rule for the adaptive RQMC loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RqmcConfig {
    /// Total point evaluations (across randomizations) to spend at least.
    pub min_samples: u64,
    /// Budget cap; the loop will not start a refinement that exceeds it.
    pub max_samples: u64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub n_randomizations: u32,
    pub seed: u64,
}

impl RqmcConfig {
    /// Defaults for likelihood terms during estimation.
    pub fn estimation(seed: u64) -> Self {
        RqmcConfig {
            min_samples: 500,
            max_samples: 10_000,
            rel_tol: 1e-2,
            abs_tol: 1e-8,
            n_randomizations: 8,
            seed,
        }
    }

    /// Defaults for imputation, where more precision is wanted.
    pub fn imputation(seed: u64) -> Self {
        RqmcConfig {
            min_samples: 2_000,
            max_samples: 20_000,
            rel_tol: 1e-3,
            abs_tol: 1e-8,
            n_randomizations: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_samples > self.max_samples {
            return Err(Error::Dimension(
                "min_samples must be <= max_samples".into(),
            ));
        }
        if self.n_randomizations < 2 {
            return Err(Error::Dimension("n_randomizations must be >= 2".into()));
        }
        // zero tolerances are allowed: the run simply uses its full
        // sample budget
        if !(self.rel_tol >= 0.0) || !(self.abs_tol >= 0.0) {
            return Err(Error::Dimension("tolerances must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One approximated integral: value, a conservative error half-width from
/// the spread across randomizations, and the budget consumed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RqmcEstimate {
    pub value: f64,
    pub error_estimate: f64,
    pub samples_used: u64,
    pub converged: bool,
}

/// One-hot output rule for a single discrete variable.
#[derive(Debug, Clone, PartialEq)]
pub enum OneHotRule {
    /// Scalar latent coordinate cut at increasing thresholds into
    /// `cuts.len() + 1` categories.
    Thresholds { coord: usize, cuts: Vec<f64> },
    /// Latent-argmax block with an implicit zero-valued reference: category
    /// 0 wins when every listed coordinate is <= 0, otherwise the argmax.
    ArgmaxWithReference { coords: Vec<usize> },
}

impl OneHotRule {
    pub fn n_categories(&self) -> usize {
        match self {
            OneHotRule::Thresholds { cuts, .. } => cuts.len() + 1,
            OneHotRule::ArgmaxWithReference { coords } => coords.len() + 1,
        }
    }
}

/// Category-boundary description for `GSpec::CategoryOneHot`: identity
/// passthrough of selected coordinates followed by stacked one-hot blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OneHotSpec {
    pub mean_coords: Vec<usize>,
    pub rules: Vec<OneHotRule>,
}

impl OneHotSpec {
    pub fn output_dim(&self) -> usize {
        self.mean_coords.len() + self.rules.iter().map(|r| r.n_categories()).sum::<usize>()
    }
}

/// The integrand factor `g` in truncated-normal expectations.
#[derive(Debug, Clone, PartialEq)]
pub enum GSpec {
    /// No expectation outputs; only the box probability.
    Constant1,
    /// `g(u) = u`, giving (unnormalized) truncated means.
    Identity,
    /// `g(u) = vec(u u^T)`, giving (unnormalized) truncated second moments.
    OuterProduct,
    /// Identity passthrough plus one-hot category indicators.
    CategoryOneHot(OneHotSpec),
}

impl GSpec {
    /// Output dimension H for a `k`-dimensional problem.
    pub fn output_dim(&self, k: usize) -> usize {
        match self {
            GSpec::Constant1 => 0,
            GSpec::Identity => k,
            GSpec::OuterProduct => k * k,
            GSpec::CategoryOneHot(spec) => spec.output_dim(),
        }
    }
}
