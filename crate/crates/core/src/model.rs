//! Joint parameterization: latent layout for mixed variable types, the
//! log-Cholesky encoded free covariance block, and free mean entries.
//!
//! Each multinomial variable with m categories owns m latent variables,
//! but the first (reference) category's latent is fixed at zero and
//! uncorrelated with everything, so it is carried symbolically. The free
//! problem is over `w_eff = c_{not M} + sum_j (m_j - 1)` coordinates whose
//! covariance is the free block `Sigma`; the full `Psi` with explicit
//! reference rows exists only for inspection.

use nalgebra::{DMatrix, DVector};

use crate::data::{Schema, VariableKind};
use crate::error::{Error, Result};

/// Latent index bookkeeping for one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayout {
    /// Start of each variable's block in the effective (free) space.
    pub offsets: Vec<usize>,
    /// Effective coordinates per variable: 1, or m-1 for multinomials.
    pub dims: Vec<usize>,
    pub kinds: Vec<VariableKind>,
    /// Effective dimension (reference latents excluded).
    pub w_eff: usize,
    /// Full dimension including one reference latent per multinomial.
    pub w_full: usize,
    /// Effective coordinates whose mean is a free parameter
    /// (binary and non-reference multinomial latents), ascending.
    pub free_mean_coords: Vec<usize>,
}

impl LatentLayout {
    pub fn new(schema: &Schema) -> Self {
        let mut offsets = Vec::with_capacity(schema.len());
        let mut dims = Vec::with_capacity(schema.len());
        let mut kinds = Vec::with_capacity(schema.len());
        let mut free_mean_coords = Vec::new();
        let mut w_eff = 0usize;
        let mut w_full = 0usize;
        for v in &schema.variables {
            offsets.push(w_eff);
            let d = match v.kind {
                VariableKind::Multinomial { levels } => {
                    for c in 0..(levels as usize - 1) {
                        free_mean_coords.push(w_eff + c);
                    }
                    w_full += levels as usize;
                    levels as usize - 1
                }
                VariableKind::Binary => {
                    free_mean_coords.push(w_eff);
                    w_full += 1;
                    1
                }
                _ => {
                    w_full += 1;
                    1
                }
            };
            dims.push(d);
            kinds.push(v.kind.clone());
            w_eff += d;
        }
        LatentLayout {
            offsets,
            dims,
            kinds,
            w_eff,
            w_full,
            free_mean_coords,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.dims.len()
    }

    /// Effective coordinates of variable `v`.
    pub fn coords(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v] + self.dims[v]
    }

    /// Number of free parameters: lower triangle of Sigma plus free means.
    pub fn n_params(&self) -> usize {
        self.w_eff * (self.w_eff + 1) / 2 + self.free_mean_coords.len()
    }

    /// Whether the diagonal entry of effective coordinate `c` is
    /// constrained to one. Exactly K coordinates are: everything except
    /// multinomial latents past the first of each block.
    pub fn diag_constrained(&self, c: usize) -> bool {
        for v in 0..self.n_vars() {
            let r = self.coords(v);
            if r.contains(&c) {
                return c == r.start || !matches!(self.kinds[v], VariableKind::Multinomial { .. });
            }
        }
        unreachable!("coordinate {c} outside layout");
    }

    /// The multinomial contrast matrix D over the full variable set:
    /// one column per multinomial, with a block of ones on its
    /// non-reference contrast rows and zero rows for binary/ordinal
    /// latents.
    pub fn contrast_d(&self) -> DMatrix<f64> {
        let mults: Vec<usize> = (0..self.n_vars())
            .filter(|&v| matches!(self.kinds[v], VariableKind::Multinomial { .. }))
            .collect();
        let n_disc_rows: usize = (0..self.n_vars())
            .map(|v| match self.kinds[v] {
                VariableKind::Multinomial { levels } => levels as usize - 1,
                VariableKind::Continuous => 0,
                _ => 1,
            })
            .sum();
        let mut d = DMatrix::zeros(n_disc_rows, mults.len());
        let mut row = 0;
        for (col, &v) in mults.iter().enumerate() {
            let VariableKind::Multinomial { levels } = self.kinds[v] else {
                unreachable!()
            };
            for _ in 0..(levels as usize - 1) {
                d[(row, col)] = 1.0;
                row += 1;
            }
        }
        d
    }
}

/// Free parameters: log-Cholesky coordinates of Sigma followed by free
/// mean entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaParams {
    pub theta: DVector<f64>,
}

impl CopulaParams {
    /// Identity covariance, zero means.
    pub fn identity(layout: &LatentLayout) -> Self {
        CopulaParams {
            theta: DVector::zeros(layout.n_params()),
        }
    }

    /// Encode an SPD covariance (with unit constrained diagonal) and free
    /// mean entries.
    pub fn encode(layout: &LatentLayout, sigma: &DMatrix<f64>, mu_free: &[f64]) -> Result<Self> {
        let w = layout.w_eff;
        assert_eq!(mu_free.len(), layout.free_mean_coords.len());
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
        let l = chol.l();
        let mut theta = DVector::zeros(layout.n_params());
        let mut t = 0;
        for i in 0..w {
            for j in 0..=i {
                theta[t] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
                t += 1;
            }
        }
        for &m in mu_free {
            theta[t] = m;
            t += 1;
        }
        Ok(CopulaParams { theta })
    }

    /// Decode into the free covariance block and full effective mean
    /// (zeros at continuous/ordinal coordinates). Always SPD for finite
    /// theta.
    pub fn decode(&self, layout: &LatentLayout) -> (DMatrix<f64>, DVector<f64>) {
        let w = layout.w_eff;
        let mut l = DMatrix::zeros(w, w);
        let mut t = 0;
        for i in 0..w {
            for j in 0..=i {
                l[(i, j)] = if i == j { self.theta[t].exp() } else { self.theta[t] };
                t += 1;
            }
        }
        let sigma = &l * l.transpose();
        let mut mu = DVector::zeros(w);
        for &c in &layout.free_mean_coords {
            mu[c] = self.theta[t];
            t += 1;
        }
        (sigma, mu)
    }

    /// Free mean entries as a slice of theta.
    pub fn mu_free(&self, layout: &LatentLayout) -> &[f64] {
        let tri = layout.w_eff * (layout.w_eff + 1) / 2;
        &self.theta.as_slice()[tri..]
    }
}

/// Scale rows/columns so every constrained diagonal entry is one. Free
/// multinomial diagonal entries keep their value but their cross terms
/// with constrained coordinates are rescaled consistently, so the result
/// stays SPD and already-normalized input is a fixed point.
pub fn rescale_to_unit_diagonal(layout: &LatentLayout, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let w = layout.w_eff;
    let scale: Vec<f64> = (0..w)
        .map(|c| {
            if layout.diag_constrained(c) {
                1.0 / sigma[(c, c)].sqrt()
            } else {
                1.0
            }
        })
        .collect();
    DMatrix::from_fn(w, w, |i, j| sigma[(i, j)] * scale[i] * scale[j])
}

/// Expand the free block into the full `Psi` with explicit reference
/// rows/columns (zero, including the diagonal since xi = 0) and the full
/// mean vector.
pub fn assemble_psi(
    layout: &LatentLayout,
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    // effective coordinate -> full coordinate
    let mut map = vec![0usize; layout.w_eff];
    let mut full = 0usize;
    for v in 0..layout.n_vars() {
        if matches!(layout.kinds[v], VariableKind::Multinomial { .. }) {
            full += 1; // reference latent row
        }
        for c in layout.coords(v) {
            map[c] = full;
            full += 1;
        }
    }
    debug_assert_eq!(full, layout.w_full);
    let mut psi = DMatrix::zeros(layout.w_full, layout.w_full);
    let mut mu_full = DVector::zeros(layout.w_full);
    for i in 0..layout.w_eff {
        mu_full[map[i]] = mu[i];
        for j in 0..layout.w_eff {
            psi[(map[i], map[j])] = sigma[(i, j)];
        }
    }
    (psi, mu_full)
}
