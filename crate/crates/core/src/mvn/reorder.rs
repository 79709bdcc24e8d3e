//! Variable reordering and Cholesky factorization for the separation of
//! variables sampler.
//!
//! Greedy heuristic: at each step pick the remaining variable with the
//! smallest conditional interval probability, conditioning previously
//! fixed variables at their truncated means. Ties go to the lowest
//! original index. Small interval probabilities early shrink the sampler
//! variance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::norm::{dnorm, phi_clamped};

use super::{GaussianParams, IntegrationBox, ReorderedProblem};

const PIVOT_TOL: f64 = 1e-12;

pub fn reorder_and_factor(
    box_: &IntegrationBox,
    params: &GaussianParams,
) -> Result<ReorderedProblem> {
    let k = box_.dim();
    if params.dim() != k {
        return Err(Error::Dimension(format!(
            "box has dimension {k} but parameters have dimension {}",
            params.dim()
        )));
    }

    let mut cov = params.cov.clone();
    let mut lower: Vec<f64> = (0..k).map(|j| box_.lower[j] - params.mean[j]).collect();
    let mut upper: Vec<f64> = (0..k).map(|j| box_.upper[j] - params.mean[j]).collect();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut chol = DMatrix::zeros(k, k);
    // truncated means of the already fixed coordinates, standardized
    let mut y = vec![0.0; k];

    for i in 0..k {
        // score every remaining candidate
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..k {
            let mut s2 = cov[(j, j)];
            let mut cond = 0.0;
            for l in 0..i {
                s2 -= chol[(j, l)] * chol[(j, l)];
                cond += chol[(j, l)] * y[l];
            }
            if s2 <= 0.0 {
                continue; // handled below if it ends up as the pivot
            }
            let s = s2.sqrt();
            let lo = phi_clamped((lower[j] - cond) / s);
            let hi = phi_clamped((upper[j] - cond) / s);
            let p = hi - lo;
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            cov.swap_rows(i, best);
            cov.swap_columns(i, best);
            chol.swap_rows(i, best);
            lower.swap(i, best);
            upper.swap(i, best);
            perm.swap(i, best);
        }

        let mut s2 = cov[(i, i)];
        let mut cond = 0.0;
        for l in 0..i {
            s2 -= chol[(i, l)] * chol[(i, l)];
            cond += chol[(i, l)] * y[l];
        }
        if s2 <= PIVOT_TOL * cov[(i, i)].abs().max(1.0) {
            return Err(Error::NotPositiveDefinite { pivot: perm[i] });
        }
        let s = s2.sqrt();
        chol[(i, i)] = s;
        for r in (i + 1)..k {
            let mut v = cov[(r, i)];
            for l in 0..i {
                v -= chol[(r, l)] * chol[(i, l)];
            }
            chol[(r, i)] = v / s;
        }

        // standardized truncated mean of this coordinate for later scores
        let lo_z = (lower[i] - cond) / s;
        let hi_z = (upper[i] - cond) / s;
        let p = (phi_clamped(hi_z) - phi_clamped(lo_z)).max(1e-300);
        y[i] = (dnorm(lo_z) - dnorm(hi_z)) / p;
    }

    let mean = nalgebra::DVector::from_iterator(k, perm.iter().map(|&j| params.mean[j]));
    Ok(ReorderedProblem {
        permutation: perm,
        chol,
        lower,
        upper,
        mean,
    })
}
