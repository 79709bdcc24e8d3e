//! Two-step fitting: empirical marginals first, then stochastic gradient
//! ascent on the RQMC log likelihood over the free covariance and mean
//! parameters, rescaling to a correlation matrix after every update.

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataTable, Schema};
use crate::error::{Error, Result};
use crate::likelihood::{build_terms, term_seed, total_loglik, LikelihoodEvaluator, ObservationTerm};
use crate::marginals::{fit_marginals, MarginalModel};
use crate::model::{rescale_to_unit_diagonal, CopulaParams, LatentLayout};
use crate::mvn::RqmcConfig;
use crate::norm::phi_inv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    Svrg,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: FitMethod,
    /// Step size on the per-observation average gradient.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rqmc: RqmcConfig,
    pub seed: u64,
    /// Stop early when the mean per-term nll improves by less than
    /// `tolerance` over the last `window` epochs.
    pub window: usize,
    pub tolerance: f64,
    /// Print one progress line per epoch to standard error.
    pub verbose: bool,
}

impl FitConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        FitConfig {
            method: FitMethod::Svrg,
            learning_rate: 1e-2,
            batch_size: 100,
            epochs: 25,
            rqmc: RqmcConfig::estimation(seed),
            seed,
            window: 5,
            tolerance: 1e-4,
            verbose: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::Schema(
                "learning rate must be positive and batch size nonzero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean negative log likelihood per observed row, one entry per epoch.
    pub nll_trace: Vec<f64>,
    pub gnorm_trace: Vec<f64>,
    pub seconds: f64,
    pub termination: String,
}

/// Starting point: identity covariance, means matched to the marginal
/// frequencies (binary: probit of the success rate; multinomial: probit
/// of each category's share of the category-plus-reference mass).
pub fn initialize(marginals: &[MarginalModel], layout: &LatentLayout) -> CopulaParams {
    let mut params = CopulaParams::identity(layout);
    let n_cov = layout.w_eff * (layout.w_eff + 1) / 2;
    let mut t = n_cov;
    for (v, m) in marginals.iter().enumerate() {
        match m {
            MarginalModel::Binary { p_hat } => {
                params.theta[t] = phi_inv(*p_hat);
                t += 1;
            }
            MarginalModel::Multinomial { freqs } => {
                let f0 = freqs[0].max(1e-12);
                for &f in &freqs[1..] {
                    let f = f.max(1e-12);
                    params.theta[t] = phi_inv(f / (f + f0));
                    t += 1;
                }
            }
            _ => {
                debug_assert!(layout.coords(v).all(|c| !layout.free_mean_coords.contains(&c)));
            }
        }
    }
    debug_assert_eq!(t, layout.n_params());
    params
}

/// Decode, force unit constrained diagonal, re-encode in place.
fn rescale(params: &mut CopulaParams, layout: &LatentLayout) {
    let (sigma, _) = params.decode(layout);
    let sigma = rescale_to_unit_diagonal(layout, &sigma);
    let mu_free = params.mu_free(layout).to_vec();
    *params = CopulaParams::encode(layout, &sigma, &mu_free)
        .expect("rescaled covariance stays positive definite");
}

fn batch_gradient(
    batch: &[ObservationTerm],
    layout: &LatentLayout,
    params: &CopulaParams,
    rqmc: &RqmcConfig,
) -> Result<DVector<f64>> {
    let ev = LikelihoodEvaluator::new(layout, params, batch)?;
    let (_, grad, _) = total_loglik(batch, &ev, rqmc, true)?;
    Ok(grad)
}

pub fn fit(
    data: &DataTable,
    schema: &Schema,
    config: &FitConfig,
) -> Result<(CopulaParams, Vec<MarginalModel>, LatentLayout, FitReport)> {
    config.validate()?;
    let start = Instant::now();
    let marginals = fit_marginals(data, schema)?;
    let layout = LatentLayout::new(schema);
    let terms: Vec<ObservationTerm> = build_terms(data, &marginals, schema, &layout)
        .into_iter()
        .filter(|t| !t.is_empty())
        .collect();
    let n = terms.len().max(1);
    let mut params = initialize(&marginals, &layout);
    let n_params = layout.n_params();

    let mut report = FitReport {
        nll_trace: vec![],
        gnorm_trace: vec![],
        seconds: 0.0,
        termination: "epoch budget".into(),
    };

    // ADAM state
    let mut m1 = DVector::zeros(n_params);
    let mut m2 = DVector::zeros(n_params);
    let mut adam_t = 0usize;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e21_71c0_9f3a_0d44);
    let mut last_finite = params.clone();

    'epochs: for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        // one lattice seed per epoch, shared by anchor and iterate so the
        // SVRG control variate sees common random numbers
        let rqmc = config.rqmc.with_seed(term_seed(config.seed, epoch));

        // full pass: epoch nll and, for SVRG, the anchor gradient
        let ev = LikelihoodEvaluator::new(&layout, &params, &terms)?;
        let (ll, full_grad, _) = total_loglik(&terms, &ev, &rqmc, true)?;
        let nll = -ll / n as f64;
        let gnorm = full_grad.norm() / n as f64;
        if !nll.is_finite() {
            params = last_finite;
            report.termination = "diverged: non-finite log likelihood".into();
            break 'epochs;
        }
        last_finite = params.clone();
        report.nll_trace.push(nll);
        report.gnorm_trace.push(gnorm);
        if config.verbose {
            eprintln!(
                "epoch={epoch} nll={nll:.6} gnorm={gnorm:.6} secs={:.2}",
                epoch_start.elapsed().as_secs_f64()
            );
        }
        if converged(&report.nll_trace, config.window, config.tolerance) {
            report.termination = "windowed nll improvement below tolerance".into();
            break 'epochs;
        }

        let anchor = params.clone();
        let mut order: Vec<usize> = (0..terms.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ObservationTerm> =
                chunk.iter().map(|&i| terms[i].clone()).collect();
            let scale = 1.0 / batch.len() as f64;
            let g_iter = batch_gradient(&batch, &layout, &params, &rqmc)?;
            let step: DVector<f64> = match config.method {
                FitMethod::Svrg => {
                    let g_anchor = batch_gradient(&batch, &layout, &anchor, &rqmc)?;
                    let g = (g_iter - g_anchor) * scale + &full_grad / n as f64;
                    g * config.learning_rate
                }
                FitMethod::Adam => {
                    adam_t += 1;
                    let g = g_iter * scale;
                    m1 = &m1 * b1 + &g * (1.0 - b1);
                    m2.zip_apply(&g, |m, gi| *m = b2 * *m + (1.0 - b2) * gi * gi);
                    let mh = &m1 / (1.0 - b1.powi(adam_t as i32));
                    let vh = &m2 / (1.0 - b2.powi(adam_t as i32));
                    DVector::from_fn(n_params, |i, _| {
                        config.learning_rate * mh[i] / (vh[i].sqrt() + eps)
                    })
                }
            };
            if step.iter().any(|x| !x.is_finite()) {
                params = last_finite.clone();
                report.termination = "diverged: non-finite gradient step".into();
                break 'epochs;
            }
            params.theta += step;
            rescale(&mut params, &layout);
        }
    }

    report.seconds = start.elapsed().as_secs_f64();
    Ok((params, marginals, layout, report))
}

fn converged(nll: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || nll.len() <= window {
        return false;
    }
    let cur = nll[nll.len() - 1];
    let past = nll[nll.len() - 1 - window];
    past - cur < tol
}
