//! Adaptive RQMC integration over truncated multivariate normals.
//!
//! The sampler is the separation-of-variables scheme: each coordinate is
//! drawn from its conditional truncated normal given the previous ones via
//! the Cholesky factor, and the product of conditional interval
//! probabilities is the importance weight. Estimates are pooled over
//! independently shifted Korobov lattices; the spread across shifts gives
//! the error estimate. Lattice sizes climb a precomputed prime ladder
//! until the error target or the sample budget is hit.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::lattice::{ladder_start, ShiftedLattice, KOROBOV_TABLE};
use crate::norm::{phi_clamped, phi_inv, TAIL_FLOOR};

use super::reorder::reorder_and_factor;
use super::{GSpec, GaussianParams, IntegrationBox, OneHotRule, ReorderedProblem, RqmcConfig, RqmcEstimate};

/// Points processed per inner-loop batch. Purely internal; results do not
/// depend on it.
const BATCH: usize = 8;
const WEIGHT_FLOOR: f64 = 1e-300;

/// Box probability and unnormalized truncated expectations of `g`.
///
/// The expectation entries approximate `int_box g(u) phi(u; mean, cov) du`;
/// divide by the cdf value to get the truncated-normal expectation.
pub fn integrate(
    box_: &IntegrationBox,
    params: &GaussianParams,
    g: &GSpec,
    config: &RqmcConfig,
) -> Result<(RqmcEstimate, Vec<RqmcEstimate>)> {
    config.validate()?;
    let k = box_.dim();
    let h = g.output_dim(k);
    if k == 0 {
        let one = RqmcEstimate {
            value: 1.0,
            error_estimate: 0.0,
            samples_used: 0,
            converged: true,
        };
        return Ok((one, vec![]));
    }
    let rp = reorder_and_factor(box_, params)?;
    let eval = GEval::new(g, &rp, k);
    let (cdf, outs) = run_adaptive(&rp, config, h, |x, out| eval.eval(x, out));
    Ok((cdf, outs))
}

/// Gradient of the box probability with respect to the mean and covariance,
/// sharing lattice points with the cdf estimate.
#[derive(Debug, Clone)]
pub struct CdfGradient {
    pub cdf: RqmcEstimate,
    pub d_mean: DVector<f64>,
    pub d_cov: DMatrix<f64>,
}

pub fn cdf_gradient(
    box_: &IntegrationBox,
    params: &GaussianParams,
    config: &RqmcConfig,
) -> Result<CdfGradient> {
    config.validate()?;
    let k = box_.dim();
    if k == 0 {
        return Ok(CdfGradient {
            cdf: RqmcEstimate {
                value: 1.0,
                error_estimate: 0.0,
                samples_used: 0,
                converged: true,
            },
            d_mean: DVector::zeros(0),
            d_cov: DMatrix::zeros(0, 0),
        });
    }
    let rp = reorder_and_factor(box_, params)?;
    // outputs: standardized first moments (k) then second moments (k*k)
    let h = k + k * k;
    let (cdf, outs) = run_adaptive(&rp, config, h, |x, out| {
        for j in 0..k {
            out[j] = x[j];
        }
        for i in 0..k {
            for j in 0..k {
                out[k + i * k + j] = x[i] * x[j];
            }
        }
    });

    let m1 = DVector::from_iterator(k, outs[..k].iter().map(|e| e.value));
    let m2 = DMatrix::from_fn(k, k, |i, j| outs[k + i * k + j].value);

    let lt = rp.chol.transpose();
    // grad wrt mean in permuted coordinates: O^-1 m1 with O^T O = Omega
    let gm_perm = lt
        .solve_upper_triangular(&m1)
        .expect("triangular solve with positive diagonal");
    // O^-1 M2 O^-T
    let a = lt
        .solve_upper_triangular(&m2)
        .expect("triangular solve with positive diagonal");
    let b = lt
        .solve_upper_triangular(&a.transpose())
        .expect("triangular solve with positive diagonal");
    // Omega^-1 in permuted coordinates
    let eye = DMatrix::identity(k, k);
    let linv = rp
        .chol
        .clone()
        .solve_lower_triangular(&eye)
        .expect("triangular solve with positive diagonal");
    let omega_inv = linv.transpose() * &linv;
    let gc_perm = 0.5 * (b - omega_inv * cdf.value);

    let mut d_mean = DVector::zeros(k);
    let mut d_cov = DMatrix::zeros(k, k);
    for i in 0..k {
        d_mean[rp.permutation[i]] = gm_perm[i];
        for j in 0..k {
            d_cov[(rp.permutation[i], rp.permutation[j])] = gc_perm[(i, j)];
        }
    }
    let d_cov = 0.5 * (&d_cov + d_cov.transpose());
    Ok(CdfGradient { cdf, d_mean, d_cov })
}

/// Evaluates `g` on the physical (unpermuted, mean-added) point.
struct GEval<'a> {
    g: &'a GSpec,
    rp: &'a ReorderedProblem,
    k: usize,
}

impl<'a> GEval<'a> {
    fn new(g: &'a GSpec, rp: &'a ReorderedProblem, k: usize) -> Self {
        GEval { g, rp, k }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        if matches!(self.g, GSpec::Constant1) {
            return;
        }
        let k = self.k;
        // physical point in original coordinate order
        let mut y = vec![0.0; k];
        for j in 0..k {
            let mut v = self.rp.mean[j];
            for l in 0..=j {
                v += self.rp.chol[(j, l)] * x[l];
            }
            y[self.rp.permutation[j]] = v;
        }
        match self.g {
            GSpec::Constant1 => unreachable!(),
            GSpec::Identity => out.copy_from_slice(&y),
            GSpec::OuterProduct => {
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = y[i] * y[j];
                    }
                }
            }
            GSpec::CategoryOneHot(spec) => {
                let mut t = 0;
                for &c in &spec.mean_coords {
                    out[t] = y[c];
                    t += 1;
                }
                for rule in &spec.rules {
                    let m = rule.n_categories();
                    out[t..t + m].fill(0.0);
                    let cat = match rule {
                        OneHotRule::Thresholds { coord, cuts } => {
                            cuts.iter().take_while(|&&c| y[*coord] > c).count()
                        }
                        OneHotRule::ArgmaxWithReference { coords } => {
                            let mut best = 0usize; // implicit reference at 0
                            let mut best_v = 0.0f64;
                            for (idx, &c) in coords.iter().enumerate() {
                                if y[c] > best_v {
                                    best_v = y[c];
                                    best = idx + 1;
                                }
                            }
                            best
                        }
                    };
                    out[t + cat] = 1.0;
                    t += m;
                }
            }
        }
    }
}

/// The adaptive randomization loop shared by `integrate` and
/// `cdf_gradient`. `eval` writes the `h` unweighted outputs for one
/// standardized draw.
fn run_adaptive<F>(
    rp: &ReorderedProblem,
    config: &RqmcConfig,
    h: usize,
    eval: F,
) -> (RqmcEstimate, Vec<RqmcEstimate>)
where
    F: Fn(&[f64], &mut [f64]),
{
    let r = config.n_randomizations as u64;
    let mut rung = ladder_start(config.min_samples.div_ceil(r));
    let mut samples_used = 0u64;

    let mut cdf = RqmcEstimate {
        value: 0.0,
        error_estimate: f64::INFINITY,
        samples_used: 0,
        converged: false,
    };
    let mut outs = vec![cdf; h];

    loop {
        let p = KOROBOV_TABLE[rung].0;
        let mut cdf_reps = Vec::with_capacity(r as usize);
        let mut out_reps = vec![Vec::with_capacity(r as usize); h];
        for rep in 0..r {
            let lat = ShiftedLattice::new(rung, rp.chol.nrows(), config.seed, rep);
            let (c, o) = sample_lattice(rp, &lat, h, &eval);
            cdf_reps.push(c);
            for (t, v) in o.into_iter().enumerate() {
                out_reps[t].push(v);
            }
        }
        samples_used += r * p;

        let (cv, ce) = pool(&cdf_reps);
        let scale = cv.abs();
        cdf = RqmcEstimate {
            value: cv,
            error_estimate: ce,
            samples_used,
            converged: ce <= config.abs_tol.max(config.rel_tol * scale),
        };
        let mut all_ok = cdf.converged;
        outs.clear();
        for reps in &out_reps {
            let (v, e) = pool(reps);
            // gradient-style outputs scale with the cdf, so judge small
            // entries against the cdf magnitude rather than themselves
            let ok = e <= config.abs_tol.max(config.rel_tol * v.abs().max(scale));
            all_ok &= ok;
            outs.push(RqmcEstimate {
                value: v,
                error_estimate: e,
                samples_used,
                converged: ok,
            });
        }

        if all_ok && samples_used >= config.min_samples {
            break;
        }
        if rung + 1 >= KOROBOV_TABLE.len() {
            break;
        }
        let next_cost = r * KOROBOV_TABLE[rung + 1].0;
        if samples_used + next_cost > config.max_samples {
            break;
        }
        rung += 1;
    }

    if cdf.value <= WEIGHT_FLOOR {
        cdf.value = f64::MIN_POSITIVE;
        cdf.converged = false;
    }
    for o in &mut outs {
        o.samples_used = samples_used;
    }
    cdf.samples_used = samples_used;
    (cdf, outs)
}

/// Mean and 3-sigma-of-the-mean half-width over randomization replicates.
fn pool(reps: &[f64]) -> (f64, f64) {
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let var = reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 3.0 * (var / n).sqrt())
}

/// One full pass over a single shifted lattice. Returns the lattice means
/// of the weight and of each weighted output.
fn sample_lattice<F>(
    rp: &ReorderedProblem,
    lat: &ShiftedLattice,
    h: usize,
    eval: &F,
) -> (f64, Vec<f64>)
where
    F: Fn(&[f64], &mut [f64]),
{
    let k = rp.chol.nrows();
    let n = lat.len();
    let mut w_sum = 0.0;
    let mut out_sum = vec![0.0; h];

    let mut u = vec![0.0; k * BATCH];
    let mut x = vec![0.0; k * BATCH];
    let mut w = [0.0f64; BATCH];
    let mut dot = [0.0f64; BATCH];
    let mut point = vec![0.0; k];
    let mut gout = vec![0.0; h];
    let mut xs = vec![0.0; k];

    let mut i = 0u64;
    while i < n {
        let lanes = ((n - i) as usize).min(BATCH);
        for lane in 0..lanes {
            lat.point(i + lane as u64, &mut point);
            for j in 0..k {
                u[j * BATCH + lane] = point[j];
            }
        }
        w[..lanes].fill(1.0);
        for j in 0..k {
            dot[..lanes].fill(0.0);
            for l in 0..j {
                let c = rp.chol[(j, l)];
                for lane in 0..lanes {
                    dot[lane] += c * x[l * BATCH + lane];
                }
            }
            let inv = 1.0 / rp.chol[(j, j)];
            let (aj, bj) = (rp.lower[j], rp.upper[j]);
            for lane in 0..lanes {
                let lo = if aj == f64::NEG_INFINITY {
                    TAIL_FLOOR
                } else {
                    phi_clamped((aj - dot[lane]) * inv)
                };
                let hi = if bj == f64::INFINITY {
                    1.0 - TAIL_FLOOR
                } else {
                    phi_clamped((bj - dot[lane]) * inv)
                };
                let d = (hi - lo).max(WEIGHT_FLOOR);
                w[lane] *= d;
                x[j * BATCH + lane] = phi_inv(lo + u[j * BATCH + lane] * d);
            }
        }
        for lane in 0..lanes {
            w_sum += w[lane];
            if h > 0 {
                for j in 0..k {
                    xs[j] = x[j * BATCH + lane];
                }
                eval(&xs, &mut gout);
                for t in 0..h {
                    out_sum[t] += w[lane] * gout[t];
                }
            }
        }
        i += lanes as u64;
    }

    let inv_n = 1.0 / n as f64;
    for t in 0..h {
        out_sum[t] *= inv_n;
    }
    (w_sum * inv_n, out_sum)
}
