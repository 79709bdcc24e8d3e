//! Per-variable marginal models and observed-value to latent-scale maps.
//!
//! Continuous variables use the rescaled empirical CDF composed with the
//! normal quantile; binary variables a shifted-mean latent thresholded at
//! zero; ordinal variables fixed thresholds from cumulative frequencies.
//! Multinomial marginals only record category frequencies here, since
//! their latent means are estimated jointly with the covariance.

use serde::{Deserialize, Serialize};

use crate::data::{DataTable, Schema, VariableKind};
use crate::error::{Error, Result};
use crate::norm::{phi, phi_inv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarginalModel {
    /// Sorted observed values; the empirical quantile transform and its
    /// inverse interpolate between order statistics.
    Continuous { sorted: Vec<f64> },
    /// Observed frequency of 1; the latent mean is `phi_inv(p_hat)`.
    Binary { p_hat: f64 },
    /// Strictly increasing interior thresholds, `levels - 1` of them.
    Ordinal { thresholds: Vec<f64> },
    /// Category frequencies; latent means are fit jointly later.
    Multinomial { freqs: Vec<f64> },
}

impl MarginalModel {
    /// Latent mean contributed by this marginal (binary only; multinomial
    /// means are free parameters initialized elsewhere).
    pub fn binary_mean(&self) -> Option<f64> {
        match self {
            MarginalModel::Binary { p_hat } => Some(phi_inv(*p_hat)),
            _ => None,
        }
    }
}

/// One row mapped to the latent scale: a point for observed continuous
/// variables, an interval for observed binary/ordinal ones, a category
/// index for observed multinomials, `None` where missing.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentValue {
    Point(f64),
    Interval(f64, f64),
    Category(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentObservation {
    pub values: Vec<Option<LatentValue>>,
}

/// Fit every column's marginal from its observed entries.
pub fn fit_marginals(data: &DataTable, schema: &Schema) -> Result<Vec<MarginalModel>> {
    schema
        .variables
        .iter()
        .enumerate()
        .map(|(col, var)| fit_column(&data.columns[col], var.name.as_str(), &var.kind))
        .collect()
}

fn fit_column(column: &[Option<f64>], name: &str, kind: &VariableKind) -> Result<MarginalModel> {
    let observed: Vec<f64> = column.iter().flatten().copied().collect();
    let degenerate = |reason: &str| Error::DegenerateColumn {
        column: name.to_string(),
        reason: reason.to_string(),
    };
    if observed.len() < 2 {
        return Err(degenerate("fewer than 2 observed values"));
    }
    match kind {
        VariableKind::Continuous => {
            let mut sorted = observed;
            sorted.sort_by(|a, b| a.total_cmp(b));
            if sorted.first() == sorted.last() {
                return Err(degenerate("constant column"));
            }
            Ok(MarginalModel::Continuous { sorted })
        }
        VariableKind::Binary => {
            let n = observed.len() as f64;
            let p_hat = observed.iter().filter(|&&v| v == 1.0).count() as f64 / n;
            if p_hat == 0.0 || p_hat == 1.0 {
                return Err(degenerate("constant column"));
            }
            Ok(MarginalModel::Binary { p_hat })
        }
        VariableKind::Ordinal { levels } => {
            let counts = category_counts(&observed, *levels, name)?;
            let n = observed.len() as f64;
            let mut cum = 0.0;
            let thresholds = counts[..(*levels as usize - 1)]
                .iter()
                .map(|&c| {
                    cum += c as f64;
                    phi_inv(cum / n)
                })
                .collect();
            Ok(MarginalModel::Ordinal { thresholds })
        }
        VariableKind::Multinomial { levels } => {
            let counts = category_counts(&observed, *levels, name)?;
            let n = observed.len() as f64;
            Ok(MarginalModel::Multinomial {
                freqs: counts.iter().map(|&c| c as f64 / n).collect(),
            })
        }
    }
}

fn category_counts(observed: &[f64], levels: u32, name: &str) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; levels as usize];
    for &v in observed {
        counts[v as usize] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateColumn {
            column: name.to_string(),
            reason: format!("declared category {k} never observed"),
        });
    }
    Ok(counts)
}

/// Forward empirical-quantile transform `f_hat^{-1}` for one continuous
/// variable: observed value -> latent z. Values outside the observed range
/// clamp to the extreme quantiles.
pub fn continuous_to_latent(sorted: &[f64], x: f64) -> f64 {
    phi_inv(ecdf_rescaled(sorted, x))
}

/// Rescaled empirical CDF with average ranks for ties, linear between
/// order statistics: returns `rank / (n + 1)`.
fn ecdf_rescaled(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    let less = sorted.partition_point(|&v| v < x);
    let leq = sorted.partition_point(|&v| v <= x);
    let np1 = (n + 1) as f64;
    if leq > less {
        // observed value: ties share the average rank
        return ((less + 1 + leq) as f64 / 2.0) / np1;
    }
    if less == 0 {
        eprintln!("warning: value {x} below observed range; clamping to lowest quantile");
        return rank_of(sorted, 0) / np1;
    }
    if less == n {
        eprintln!("warning: value {x} above observed range; clamping to highest quantile");
        return rank_of(sorted, n - 1) / np1;
    }
    // strictly between two observed values: interpolate their quantiles
    let (x0, x1) = (sorted[less - 1], sorted[less]);
    let (p0, p1) = (rank_of(sorted, less - 1), rank_of(sorted, less));
    let t = (x - x0) / (x1 - x0);
    (p0 + t * (p1 - p0)) / np1
}

/// Average 1-based rank of the (tied group containing) index `i`.
fn rank_of(sorted: &[f64], i: usize) -> f64 {
    let v = sorted[i];
    let less = sorted.partition_point(|&w| w < v);
    let leq = sorted.partition_point(|&w| w <= v);
    (less + 1 + leq) as f64 / 2.0
}

/// Inverse transform `f_hat`: latent z -> data scale, piecewise linear
/// between order statistics in quantile space, clamped at the extremes.
pub fn continuous_from_latent(sorted: &[f64], z: f64) -> f64 {
    let n = sorted.len();
    let t = phi(z) * (n + 1) as f64; // continuous 1-based rank
    if t <= 1.0 {
        return sorted[0];
    }
    if t >= n as f64 {
        return sorted[n - 1];
    }
    let i = t.floor() as usize; // 1-based
    let frac = t - i as f64;
    sorted[i - 1] + frac * (sorted[i] - sorted[i - 1])
}

/// Map one row to the latent scale.
pub fn to_latent(
    data: &DataTable,
    row: usize,
    marginals: &[MarginalModel],
    schema: &Schema,
) -> LatentObservation {
    let values = schema
        .variables
        .iter()
        .enumerate()
        .map(|(col, _)| {
            data.get(row, col)
                .map(|x| latent_value(x, &marginals[col]))
        })
        .collect();
    LatentObservation { values }
}

pub fn latent_value(x: f64, marginal: &MarginalModel) -> LatentValue {
    match marginal {
        MarginalModel::Continuous { sorted } => LatentValue::Point(continuous_to_latent(sorted, x)),
        MarginalModel::Binary { .. } => {
            if x == 1.0 {
                LatentValue::Interval(0.0, f64::INFINITY)
            } else {
                LatentValue::Interval(f64::NEG_INFINITY, 0.0)
            }
        }
        MarginalModel::Ordinal { thresholds } => {
            let k = x as usize;
            let lo = if k == 0 { f64::NEG_INFINITY } else { thresholds[k - 1] };
            let hi = if k == thresholds.len() { f64::INFINITY } else { thresholds[k] };
            LatentValue::Interval(lo, hi)
        }
        MarginalModel::Multinomial { .. } => LatentValue::Category(x as u32),
    }
}
