//! Per-observation log marginal likelihood and its gradient in the free
//! parameter coordinates.
//!
//! Each row factors into an exact Gaussian log density over its observed
//! continuous latents and a box probability over constraints built from
//! its observed discrete variables, conditional on the continuous part
//! (Schur complement). Multinomial observations enter through sibling
//! contrasts against the observed category's latent, which keeps the box
//! axis-aligned. Rows sharing a missingness pattern share the conditional
//! moments.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::data::{DataTable, Schema, VariableKind};
use crate::error::{Error, Result};
use crate::marginals::{latent_value, LatentValue, MarginalModel};
use crate::model::{CopulaParams, LatentLayout};
use crate::mvn::{cdf_gradient, integrate, CdfGradient, GSpec, GaussianParams, IntegrationBox, RqmcConfig, RqmcEstimate};

/// One row's contribution, mapped to the latent scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTerm {
    pub row: usize,
    /// Effective coordinates of observed continuous variables, ascending.
    pub cont_coords: Vec<usize>,
    pub zhat: Vec<f64>,
    pub disc: Vec<DiscreteObs>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteObs {
    /// Observed binary/ordinal variable: its latent lies in an interval.
    Interval { coord: usize, lower: f64, upper: f64 },
    /// Observed multinomial: its non-reference latent block and the
    /// observed category (0 = reference).
    Multinomial { coords: Vec<usize>, category: u32 },
}

impl ObservationTerm {
    /// All effective discrete coordinates entering the box, ascending.
    pub fn disc_coords(&self) -> Vec<usize> {
        let mut q = Vec::new();
        for d in &self.disc {
            match d {
                DiscreteObs::Interval { coord, .. } => q.push(*coord),
                DiscreteObs::Multinomial { coords, .. } => q.extend(coords.iter().copied()),
            }
        }
        q.sort_unstable();
        q
    }

    pub fn is_empty(&self) -> bool {
        self.cont_coords.is_empty() && self.disc.is_empty()
    }
}

/// Build one term per row. Rows with no observed variable produce a term
/// with no content; the likelihood skips them.
pub fn build_terms(
    data: &DataTable,
    marginals: &[MarginalModel],
    schema: &Schema,
    layout: &LatentLayout,
) -> Vec<ObservationTerm> {
    (0..data.n_rows)
        .map(|row| {
            let mut term = ObservationTerm {
                row,
                cont_coords: vec![],
                zhat: vec![],
                disc: vec![],
            };
            for (v, var) in schema.variables.iter().enumerate() {
                let Some(x) = data.get(row, v) else { continue };
                let coord = layout.offsets[v];
                match latent_value(x, &marginals[v]) {
                    LatentValue::Point(z) => {
                        term.cont_coords.push(coord);
                        term.zhat.push(z);
                    }
                    LatentValue::Interval(lo, hi) => {
                        term.disc.push(DiscreteObs::Interval { coord, lower: lo, upper: hi });
                    }
                    LatentValue::Category(c) => {
                        let VariableKind::Multinomial { .. } = var.kind else {
                            unreachable!()
                        };
                        term.disc.push(DiscreteObs::Multinomial {
                            coords: layout.coords(v).collect(),
                            category: c,
                        });
                    }
                }
            }
            term
        })
        .collect()
}

/// Conditional moments shared by all rows with one missingness pattern.
struct PatternData {
    c_coords: Vec<usize>,
    q_coords: Vec<usize>,
    chol_cc: Option<Cholesky<f64, Dyn>>,
    log_det_cc: f64,
    /// Regression matrix `Sigma_QC Sigma_CC^-1` (|Q| x |C|).
    b_mat: DMatrix<f64>,
    /// Conditional covariance of the discrete coordinates given the
    /// continuous ones.
    s_bar: DMatrix<f64>,
}

/// Parameter snapshot plus the per-pattern cache for one theta.
pub struct LikelihoodEvaluator<'a> {
    pub layout: &'a LatentLayout,
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// Lower Cholesky factor decoded straight from theta.
    chol_theta: DMatrix<f64>,
    patterns: HashMap<(Vec<usize>, Vec<usize>), PatternData>,
}

impl<'a> LikelihoodEvaluator<'a> {
    pub fn new(
        layout: &'a LatentLayout,
        params: &CopulaParams,
        terms: &[ObservationTerm],
    ) -> Result<Self> {
        let (sigma, mu) = params.decode(layout);
        let w = layout.w_eff;
        let mut chol_theta = DMatrix::zeros(w, w);
        let mut t = 0;
        for i in 0..w {
            for j in 0..=i {
                chol_theta[(i, j)] = if i == j {
                    params.theta[t].exp()
                } else {
                    params.theta[t]
                };
                t += 1;
            }
        }
        let mut ev = LikelihoodEvaluator {
            layout,
            sigma,
            mu,
            chol_theta,
            patterns: HashMap::new(),
        };
        for term in terms {
            if term.is_empty() {
                continue;
            }
            let key = (term.cont_coords.clone(), term.disc_coords());
            if !ev.patterns.contains_key(&key) {
                let pd = ev.build_pattern(&key.0, &key.1)?;
                ev.patterns.insert(key, pd);
            }
        }
        Ok(ev)
    }

    fn build_pattern(&self, c_coords: &[usize], q_coords: &[usize]) -> Result<PatternData> {
        let nc = c_coords.len();
        let nq = q_coords.len();
        let sub = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.sigma[(rows[i], cols[j])])
        };
        let sigma_qq = sub(q_coords, q_coords);
        if nc == 0 {
            return Ok(PatternData {
                c_coords: c_coords.to_vec(),
                q_coords: q_coords.to_vec(),
                chol_cc: None,
                log_det_cc: 0.0,
                b_mat: DMatrix::zeros(nq, 0),
                s_bar: sigma_qq,
            });
        }
        let sigma_cc = sub(c_coords, c_coords);
        let chol = sigma_cc
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
        let log_det_cc = 2.0 * (0..nc).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
        let sigma_qc = sub(q_coords, c_coords);
        // B = Sigma_QC Sigma_CC^-1, via solving against the transpose
        let b_mat = chol.solve(&sigma_qc.transpose()).transpose();
        let s_bar = &sigma_qq - &b_mat * sigma_qc.transpose();
        Ok(PatternData {
            c_coords: c_coords.to_vec(),
            q_coords: q_coords.to_vec(),
            chol_cc: Some(chol),
            log_det_cc,
            b_mat,
            s_bar,
        })
    }

    fn pattern(&self, term: &ObservationTerm) -> &PatternData {
        self.patterns
            .get(&(term.cont_coords.clone(), term.disc_coords()))
            .expect("pattern built during construction")
    }
}

/// Constraint rows over the discrete coordinates: an axis-aligned box for
/// `t_mat * Y_Q` equivalent to the observed discrete outcomes.
struct Constraints {
    t_mat: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn build_constraints(term: &ObservationTerm, q_coords: &[usize]) -> Constraints {
    let pos = |coord: usize| q_coords.binary_search(&coord).expect("coord in pattern");
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for d in &term.disc {
        match d {
            DiscreteObs::Interval { coord, lower: lo, upper: hi } => {
                rows.push(vec![(pos(*coord), 1.0)]);
                lower.push(*lo);
                upper.push(*hi);
            }
            DiscreteObs::Multinomial { coords, category } => {
                if *category == 0 {
                    // reference observed: every non-reference latent <= 0
                    for &c in coords {
                        rows.push(vec![(pos(c), 1.0)]);
                        lower.push(f64::NEG_INFINITY);
                        upper.push(0.0);
                    }
                } else {
                    let target = coords[*category as usize - 1];
                    let tp = pos(target);
                    // siblings lose to the observed category
                    for &c in coords {
                        if c != target {
                            rows.push(vec![(pos(c), 1.0), (tp, -1.0)]);
                            lower.push(f64::NEG_INFINITY);
                            upper.push(0.0);
                        }
                    }
                    // and the zero-valued reference loses too
                    rows.push(vec![(tp, -1.0)]);
                    lower.push(f64::NEG_INFINITY);
                    upper.push(0.0);
                }
            }
        }
    }
    let mut t_mat = DMatrix::zeros(rows.len(), q_coords.len());
    for (r, entries) in rows.iter().enumerate() {
        for &(c, v) in entries {
            t_mat[(r, c)] = v;
        }
    }
    Constraints { t_mat, lower, upper }
}

/// Deterministic per-row RQMC seed.
pub fn term_seed(global: u64, row: usize) -> u64 {
    let mut z = global ^ (row as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run `f` on the constraint-box gradient problem, retrying with a small
/// diagonal jitter when near-singular conditionals break the
/// factorization.
fn with_jitter<T>(
    m: &DVector<f64>,
    cov: &DMatrix<f64>,
    f: impl Fn(&GaussianParams) -> Result<T>,
) -> Result<T> {
    let mut jitter = 0.0;
    loop {
        let mut c = cov.clone();
        if jitter > 0.0 {
            for i in 0..c.nrows() {
                c[(i, i)] += jitter;
            }
        }
        match f(&GaussianParams { mean: m.clone(), cov: c }) {
            Ok(v) => return Ok(v),
            Err(Error::NotPositiveDefinite { .. }) if jitter < 1e-6 => {
                jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
            }
            Err(e) => return Err(e),
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_phi_term(pd: &PatternData, zhat: &[f64]) -> (f64, DVector<f64>) {
    // returns log density and A * zhat (A = Sigma_CC^-1)
    let nc = zhat.len();
    if nc == 0 {
        return (0.0, DVector::zeros(0));
    }
    let z = DVector::from_column_slice(zhat);
    let az = pd.chol_cc.as_ref().unwrap().solve(&z);
    let quad = z.dot(&az);
    (-0.5 * (nc as f64 * LN_2PI + pd.log_det_cc + quad), az)
}

/// Log marginal likelihood of one row.
pub fn loglik_term(
    term: &ObservationTerm,
    ev: &LikelihoodEvaluator,
    config: &RqmcConfig,
) -> Result<RqmcEstimate> {
    let pd = ev.pattern(term);
    let (logphi, _az) = log_phi_term(pd, &term.zhat);
    if pd.q_coords.is_empty() {
        return Ok(RqmcEstimate {
            value: logphi,
            error_estimate: 0.0,
            samples_used: 0,
            converged: true,
        });
    }
    let (m, cov, cons) = conditional_box(term, ev, pd);
    let box_ = IntegrationBox::new(cons.lower.clone(), cons.upper.clone())?;
    let (cdf, _) = with_jitter(&m, &cov, |p| {
        integrate(&box_, p, &GSpec::Constant1, config)
    })?;
    Ok(RqmcEstimate {
        value: logphi + cdf.value.ln(),
        error_estimate: cdf.error_estimate / cdf.value,
        samples_used: cdf.samples_used,
        converged: cdf.converged,
    })
}

/// Conditional mean/covariance of the constraint coordinates.
fn conditional_box(
    term: &ObservationTerm,
    ev: &LikelihoodEvaluator,
    pd: &PatternData,
) -> (DVector<f64>, DMatrix<f64>, Constraints) {
    let mu_q = DVector::from_iterator(pd.q_coords.len(), pd.q_coords.iter().map(|&c| ev.mu[c]));
    let mu_bar = if term.zhat.is_empty() {
        mu_q
    } else {
        mu_q + &pd.b_mat * DVector::from_column_slice(&term.zhat)
    };
    let cons = build_constraints(term, &pd.q_coords);
    let m = &cons.t_mat * &mu_bar;
    let cov = &cons.t_mat * &pd.s_bar * cons.t_mat.transpose();
    (m, cov, cons)
}

/// Log likelihood of one row together with its gradient in theta
/// coordinates. The value reuses the gradient pass's lattice points.
pub fn loglik_gradient_term(
    term: &ObservationTerm,
    ev: &LikelihoodEvaluator,
    config: &RqmcConfig,
) -> Result<(RqmcEstimate, DVector<f64>)> {
    let layout = ev.layout;
    let w = layout.w_eff;
    let pd = ev.pattern(term);
    let (logphi, az) = log_phi_term(pd, &term.zhat);
    let nc = pd.c_coords.len();

    // full-matrix gradient wrt Sigma and the free means
    let mut g_sigma = DMatrix::zeros(w, w);
    let mut g_mu = DVector::zeros(w);
    let mut value = logphi;
    let mut est = RqmcEstimate {
        value: 0.0,
        error_estimate: 0.0,
        samples_used: 0,
        converged: true,
    };

    // continuous part: d log phi / d Sigma_CC = (A z z^T A - A) / 2
    if nc > 0 {
        let a_inv = pd
            .chol_cc
            .as_ref()
            .unwrap()
            .solve(&DMatrix::identity(nc, nc));
        for i in 0..nc {
            for j in 0..nc {
                g_sigma[(pd.c_coords[i], pd.c_coords[j])] +=
                    0.5 * (az[i] * az[j] - a_inv[(i, j)]);
            }
        }
    }

    if !pd.q_coords.is_empty() {
        let (m, cov, cons) = conditional_box(term, ev, pd);
        let box_ = IntegrationBox::new(cons.lower.clone(), cons.upper.clone())?;
        let grad: CdfGradient = with_jitter(&m, &cov, |p| cdf_gradient(&box_, p, config))?;
        value += grad.cdf.value.ln();
        est = RqmcEstimate {
            value: 0.0,
            error_estimate: grad.cdf.error_estimate / grad.cdf.value,
            samples_used: grad.cdf.samples_used,
            converged: grad.cdf.converged,
        };

        let g_m = &grad.d_mean / grad.cdf.value;
        let g_mm = &grad.d_cov / grad.cdf.value;
        // back through the contrast map
        let g_mu_bar = cons.t_mat.transpose() * &g_m;
        let g_s_bar = cons.t_mat.transpose() * &g_mm * &cons.t_mat;

        let nq = pd.q_coords.len();
        // mean entries enter mu_bar linearly
        for i in 0..nq {
            g_mu[pd.q_coords[i]] += g_mu_bar[i];
        }
        // Sigma_QQ
        for i in 0..nq {
            for j in 0..nq {
                g_sigma[(pd.q_coords[i], pd.q_coords[j])] += g_s_bar[(i, j)];
            }
        }
        if nc > 0 {
            // Sigma_QC: mu_bar path + S_bar path
            let g_qc = &g_mu_bar * az.transpose() - 2.0 * &g_s_bar * &pd.b_mat;
            for i in 0..nq {
                for j in 0..nc {
                    g_sigma[(pd.q_coords[i], pd.c_coords[j])] += g_qc[(i, j)];
                }
            }
            // Sigma_CC corrections from the conditional moments
            let g_cc = pd.b_mat.transpose() * &g_s_bar * &pd.b_mat
                - pd.b_mat.transpose() * &g_mu_bar * az.transpose();
            for i in 0..nc {
                for j in 0..nc {
                    g_sigma[(pd.c_coords[i], pd.c_coords[j])] += g_cc[(i, j)];
                }
            }
        }
    }
    est.value = value;

    // only the symmetric part acts on a symmetric Sigma
    let g_sym = 0.5 * (&g_sigma + g_sigma.transpose());
    // chain through Sigma = L L^T with logged diagonal
    let g_l: DMatrix<f64> = 2.0 * g_sym * &ev.chol_theta;
    let mut grad_theta = DVector::zeros(layout.n_params());
    let mut t = 0;
    for i in 0..w {
        for j in 0..=i {
            grad_theta[t] = if i == j {
                g_l[(i, i)] * ev.chol_theta[(i, i)]
            } else {
                g_l[(i, j)]
            };
            t += 1;
        }
    }
    for &c in &layout.free_mean_coords {
        grad_theta[t] = g_mu[c];
        t += 1;
    }
    Ok((est, grad_theta))
}

/// Per-dataset convergence summary.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    pub n_terms: usize,
    pub unconverged_rows: Vec<usize>,
}

/// Sum of per-row log likelihoods and gradients, reduced in row order so
/// the result is independent of the parallel schedule. Per-term seeds
/// derive from (seed, row index).
pub fn total_loglik(
    terms: &[ObservationTerm],
    ev: &LikelihoodEvaluator,
    config: &RqmcConfig,
    with_gradient: bool,
) -> Result<(f64, DVector<f64>, ConvergenceReport)> {
    let results: Vec<Result<(RqmcEstimate, Option<DVector<f64>>, usize)>> = terms
        .par_iter()
        .filter(|t| !t.is_empty())
        .map(|term| {
            let cfg = config.with_seed(term_seed(config.seed, term.row));
            if with_gradient {
                let (est, g) = loglik_gradient_term(term, ev, &cfg)?;
                Ok((est, Some(g), term.row))
            } else {
                let est = loglik_term(term, ev, &cfg)?;
                Ok((est, None, term.row))
            }
        })
        .collect();

    let mut value = 0.0;
    let mut grad = DVector::zeros(ev.layout.n_params());
    let mut report = ConvergenceReport::default();
    for r in results {
        let (est, g, row) = r?;
        value += est.value;
        if let Some(g) = g {
            grad += g;
        }
        report.n_terms += 1;
        if !est.converged {
            report.unconverged_rows.push(row);
        }
    }
    Ok((value, grad, report))
}
