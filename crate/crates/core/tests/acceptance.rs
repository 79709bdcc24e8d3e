//! Acceptance gate: one test per acceptance criterion, each printing a
//! single `criterion N (...): PASS|FAIL` line. Oracles are independent of
//! the library code paths they check: closed-form orthant probabilities,
//! tensor Gauss-Legendre quadrature, plain Monte Carlo, finite
//! differences, and brute-force latent samplers.

use std::time::Instant;

use gcmix::data::{Schema, Variable, VariableKind};
use gcmix::estimator::{fit, FitConfig};
use gcmix::imputer::{impute_dataset, impute_row, CellImputation, FittedModel, ImputeRule};
use gcmix::likelihood::{loglik_gradient_term, loglik_term, LikelihoodEvaluator, ObservationTerm, DiscreteObs};
use gcmix::metrics;
use gcmix::model::{CopulaParams, LatentLayout};
use gcmix::mvn::{cdf_gradient, integrate, GSpec, GaussianParams, IntegrationBox, RqmcConfig};
use gcmix::simulate::{simulate, ContinuousMarginal, SimConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(n: u32, name: &str, pass: bool) {
    println!(
        "criterion {n} ({name}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---------- oracle helpers ----------

fn random_corr(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut m = &a * a.transpose();
    for i in 0..dim {
        m[(i, i)] += 0.5;
    }
    let d: Vec<f64> = (0..dim).map(|i| 1.0 / m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(dim, dim, |i, j| m[(i, j)] * d[i] * d[j])
}

fn random_box(dim: usize, rng: &mut ChaCha8Rng) -> IntegrationBox {
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    for i in 0..dim {
        let lo = if rng.gen::<f64>() < 0.35 {
            f64::NEG_INFINITY
        } else {
            rng.gen_range(-2.5..0.5)
        };
        let hi = if lo == f64::NEG_INFINITY && rng.gen::<f64>() < 0.35 {
            f64::INFINITY
        } else {
            let base = if lo.is_finite() { lo } else { -1.5 };
            base + rng.gen_range(0.5..3.0)
        };
        lower[i] = lo;
        upper[i] = hi;
    }
    IntegrationBox::new(lower, upper).unwrap()
}

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // evaluate P_n and P_n' by recurrence
            let (mut p0, mut p1) = (1.0f64, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        x[i] = t;
        let (mut p0, mut p1) = (1.0f64, t);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// Tensor-product quadrature of the Gaussian density over a box
/// (dimensions <= 4; infinite bounds clipped at +/-8.5 sd).
fn quad_box_prob(box_: &IntegrationBox, params: &GaussianParams) -> f64 {
    let dim = box_.dim();
    let nodes = match dim {
        1 => 201,
        2 => 96,
        3 => 48,
        _ => 28,
    };
    let (gx, gw) = gauss_legendre(nodes);
    let chol = params.cov.clone().cholesky().unwrap();
    let inv = chol.inverse();
    let log_det = 2.0 * (0..dim).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);

    let clip = |v: f64, i: usize, lo: bool| {
        let sd = params.cov[(i, i)].sqrt();
        if v.is_finite() {
            v
        } else if lo {
            params.mean[i] - 8.5 * sd
        } else {
            params.mean[i] + 8.5 * sd
        }
    };
    let ranges: Vec<(f64, f64)> = (0..dim)
        .map(|i| (clip(box_.lower[i], i, true), clip(box_.upper[i], i, false)))
        .collect();

    // iterate the tensor grid with a mixed-radix counter
    let mut idx = vec![0usize; dim];
    let mut total = 0.0;
    let mut z = DVector::zeros(dim);
    loop {
        let mut wgt = 1.0;
        for i in 0..dim {
            let (a, b) = ranges[i];
            z[i] = 0.5 * (a + b) + 0.5 * (b - a) * gx[idx[i]];
            wgt *= 0.5 * (b - a) * gw[idx[i]];
        }
        let d = &z - &params.mean;
        let q = (&inv * &d).dot(&d);
        total += wgt * (log_norm - 0.5 * q).exp();
        // advance counter
        let mut i = 0;
        loop {
            idx[i] += 1;
            if idx[i] < nodes {
                break;
            }
            idx[i] = 0;
            i += 1;
            if i == dim {
                return total;
            }
        }
    }
}

/// Plain Monte Carlo box probability with its standard error.
fn mc_box_prob(
    box_: &IntegrationBox,
    params: &GaussianParams,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let dim = box_.dim();
    let chol = params.cov.clone().cholesky().unwrap();
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut u = vec![0.0f64; dim];
    for _ in 0..draws {
        for ui in u.iter_mut() {
            *ui = rng.sample(StandardNormal);
        }
        let mut inside = true;
        for i in 0..dim {
            let mut z = params.mean[i];
            for j in 0..=i {
                z += l[(i, j)] * u[j];
            }
            if z < box_.lower[i] || z > box_.upper[i] {
                inside = false;
                break;
            }
        }
        hits += inside as usize;
    }
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

fn phi(x: f64) -> f64 {
    gcmix::norm::phi(x)
}

// ---------- criterion 1 ----------

#[test]
fn criterion_1_cdf_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5501);
    let mut pass = true;
    let mut total_time = 0.0f64;
    let n_problems = 100;

    for i in 0..n_problems {
        let dim = i % 8 + 1;
        let (box_, params, oracle, oracle_se) = if dim == 1 {
            let b = random_box(1, &mut rng);
            let mean = rng.gen_range(-0.5..0.5);
            let p = phi(b.upper[0] - mean) - phi(b.lower[0] - mean);
            (
                b,
                GaussianParams {
                    mean: DVector::from_element(1, mean),
                    cov: DMatrix::identity(1, 1),
                },
                p,
                0.0,
            )
        } else if dim == 2 {
            // centered orthant with a closed-form answer
            let rho: f64 = rng.gen_range(-0.95..0.95);
            let s1: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let s2: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            // P(s1 X > 0, s2 Y > 0) with corr rho = orthant with corr s1 s2 rho
            let r_eff = s1 * s2 * rho;
            let p = 0.25 + r_eff.asin() / (2.0 * std::f64::consts::PI);
            let pick = |s: f64| {
                if s > 0.0 {
                    (0.0, f64::INFINITY)
                } else {
                    (f64::NEG_INFINITY, 0.0)
                }
            };
            let (l1, u1) = pick(s1);
            let (l2, u2) = pick(s2);
            (
                IntegrationBox::new(vec![l1, l2], vec![u1, u2]).unwrap(),
                GaussianParams {
                    mean: DVector::zeros(2),
                    cov: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
                },
                p,
                0.0,
            )
        } else {
            let cov = random_corr(dim, &mut rng);
            let mean = DVector::from_fn(dim, |_, _| rng.gen_range(-0.5..0.5));
            let b = random_box(dim, &mut rng);
            let params = GaussianParams { mean, cov };
            let (p, se) = if dim <= 4 {
                (quad_box_prob(&b, &params), 0.0)
            } else {
                mc_box_prob(&b, &params, 10_000_000, 0xBEEF + i as u64)
            };
            (b, params, p, se)
        };

        let config = RqmcConfig {
            min_samples: 2000,
            max_samples: 2_000_000,
            rel_tol: 1e-4,
            abs_tol: 0.0,
            n_randomizations: 8,
            seed: 0x51D + i as u64,
        };
        let t0 = Instant::now();
        let (est, _) = integrate(&box_, &params, &GSpec::Constant1, &config).unwrap();
        total_time += t0.elapsed().as_secs_f64();

        let err = (est.value - oracle).abs();
        // the RQMC half-width is 3*sd with sd estimated from 8 shifts, so
        // the multiplier matching 3-sigma coverage is the Student-t
        // quantile at 7 degrees of freedom (~4.5), not 3
        let rqmc_se = est.error_estimate / 3.0;
        let pooled = ((4.5 * rqmc_se).powi(2) + (3.0 * oracle_se).powi(2)).sqrt();
        let ok = err <= pooled.max(1e-6) && (dim > 4 || err <= 1e-3);
        if !ok {
            eprintln!(
                "problem {i} dim {dim}: est {} oracle {oracle} err {err:.2e} allowed {:.2e}",
                est.value,
                pooled.max(1e-6)
            );
            pass = false;
        }
    }
    let avg_ms = total_time / n_problems as f64 * 1000.0;
    eprintln!("average integrate time: {avg_ms:.1} ms");
    if avg_ms >= 50.0 {
        pass = false;
    }
    report(1, "CDF accuracy", pass);
    assert!(pass);
}

// ---------- criterion 2 ----------

fn tight_fixed_config(seed: u64) -> RqmcConfig {
    // single large rung: constant-size lattices make finite differences
    // with common seeds nearly noise-free
    RqmcConfig {
        min_samples: 8 * 22303,
        max_samples: 8 * 22303,
        rel_tol: 0.0,
        abs_tol: f64::INFINITY,
        n_randomizations: 8,
        seed,
    }
}

#[test]
fn criterion_2_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5502);
    let mut n_coords = 0usize;
    let mut n_pass = 0usize;
    let h = 1e-4;

    // cdf_gradient vs finite differences of integrate
    for i in 0..50 {
        let dim = i % 6 + 1;
        let cov = random_corr(dim, &mut rng);
        let mean = DVector::from_fn(dim, |_, _| rng.gen_range(-0.5..0.5));
        let box_ = random_box(dim, &mut rng);
        let config = tight_fixed_config(0xF00 + i as u64);
        let params = GaussianParams { mean: mean.clone(), cov: cov.clone() };
        let grad = cdf_gradient(&box_, &params, &config).unwrap();

        let value = |m: &DVector<f64>, c: &DMatrix<f64>| {
            let p = GaussianParams { mean: m.clone(), cov: c.clone() };
            integrate(&box_, &p, &GSpec::Constant1, &config).unwrap().0.value
        };
        let mut check = |an: f64, fd: f64| {
            n_coords += 1;
            // coordinates whose gradient is below the integration noise
            // floor cannot be resolved to a relative tolerance
            if (an - fd).abs() <= (1e-2 * an.abs().max(fd.abs())).max(2e-4) {
                n_pass += 1;
            } else {
                eprintln!("grad mismatch: analytic {an:.6e} fd {fd:.6e}");
            }
        };
        for c in 0..dim {
            let mut up = mean.clone();
            up[c] += h;
            let mut dn = mean.clone();
            dn[c] -= h;
            let fd = (value(&up, &cov) - value(&dn, &cov)) / (2.0 * h);
            check(grad.d_mean[c], fd);
        }
        for a in 0..dim {
            for b in 0..=a {
                let mut up = cov.clone();
                let mut dn = cov.clone();
                up[(a, b)] += h;
                dn[(a, b)] -= h;
                if a != b {
                    up[(b, a)] += h;
                    dn[(b, a)] -= h;
                }
                let fd = (value(&mean, &up) - value(&mean, &dn)) / (2.0 * h);
                let an = if a == b {
                    grad.d_cov[(a, a)]
                } else {
                    grad.d_cov[(a, b)] + grad.d_cov[(b, a)]
                };
                check(an, fd);
            }
        }
    }

    // loglik_gradient_term vs finite differences in theta
    let schema = Schema::new(vec![
        Variable { name: "x".into(), kind: VariableKind::Continuous },
        Variable { name: "b".into(), kind: VariableKind::Binary },
        Variable { name: "o".into(), kind: VariableKind::Ordinal { levels: 3 } },
        Variable { name: "m".into(), kind: VariableKind::Multinomial { levels: 3 } },
    ])
    .unwrap();
    let layout = LatentLayout::new(&schema);
    for i in 0..10u64 {
        let sigma = {
            // random SPD with unit diagonal on the constrained coordinates
            let raw = random_corr(layout.w_eff, &mut rng);
            gcmix::model::rescale_to_unit_diagonal(&layout, &raw)
        };
        let mu: Vec<f64> = (0..layout.free_mean_coords.len())
            .map(|_| rng.gen_range(-0.4..0.4))
            .collect();
        let params = CopulaParams::encode(&layout, &sigma, &mu).unwrap();
        let term = ObservationTerm {
            row: 0,
            cont_coords: vec![0],
            zhat: vec![rng.gen_range(-1.0..1.0)],
            disc: vec![
                DiscreteObs::Interval {
                    coord: 1,
                    lower: 0.0,
                    upper: f64::INFINITY,
                },
                DiscreteObs::Multinomial { coords: vec![3, 4], category: (i % 3) as u32 },
            ],
        };
        let config = tight_fixed_config(0xFACADE + i);
        let ev = LikelihoodEvaluator::new(&layout, &params, std::slice::from_ref(&term)).unwrap();
        let (_, grad) = loglik_gradient_term(&term, &ev, &config).unwrap();
        for t in 0..layout.n_params() {
            let mut up = params.clone();
            up.theta[t] += h;
            let mut dn = params.clone();
            dn.theta[t] -= h;
            let f = |p: &CopulaParams| {
                let e = LikelihoodEvaluator::new(&layout, p, std::slice::from_ref(&term)).unwrap();
                loglik_term(&term, &e, &config).unwrap().value
            };
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            n_coords += 1;
            if (grad[t] - fd).abs() <= (1e-2 * grad[t].abs().max(fd.abs())).max(2e-4) {
                n_pass += 1;
            } else {
                eprintln!("theta grad mismatch at {t}: analytic {} fd {fd}", grad[t]);
            }
        }
    }

    let frac = n_pass as f64 / n_coords as f64;
    eprintln!("gradient coordinates passing: {n_pass}/{n_coords} ({frac:.4})");
    let pass = frac >= 0.98;
    report(2, "gradient correctness", pass);
    assert!(pass);
}

// ---------- criterion 3 ----------

#[test]
fn criterion_3_rqmc_convergence_rate() {
    // fixed 5-dim problem
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5503);
    let cov = random_corr(5, &mut rng);
    let params = GaussianParams { mean: DVector::zeros(5), cov };
    let box_ = IntegrationBox::new(
        vec![-1.0, f64::NEG_INFINITY, -2.0, -0.5, f64::NEG_INFINITY],
        vec![1.5, 0.5, f64::INFINITY, 2.0, 1.0],
    )
    .unwrap();

    // reference value from a much larger budget
    let tight = RqmcConfig {
        min_samples: 2_000_000,
        max_samples: 4_000_000,
        rel_tol: 0.0,
        abs_tol: 0.0,
        n_randomizations: 8,
        seed: 999,
    };
    let truth = integrate(&box_, &params, &GSpec::Constant1, &tight).unwrap().0.value;

    // lattice sizes spanning roughly 2^7 .. 2^14 points per randomization
    let sizes = [107u64, 251, 569, 1289, 2927, 6599, 14867];
    let mut xs = vec![];
    let mut ys = vec![];
    for (k, &p) in sizes.iter().enumerate() {
        // average the absolute error over several independent shift seeds
        let mut err_sum = 0.0;
        let reps = 5;
        for s in 0..reps {
            let cfg = RqmcConfig {
                min_samples: 8 * p,
                max_samples: 8 * p,
                rel_tol: 0.0,
                abs_tol: f64::INFINITY,
                n_randomizations: 8,
                seed: 1000 + (k * reps + s) as u64,
            };
            let est = integrate(&box_, &params, &GSpec::Constant1, &cfg).unwrap().0;
            assert_eq!(est.samples_used, 8 * p);
            err_sum += (est.value - truth).abs();
        }
        xs.push(((8 * p) as f64).ln());
        ys.push((err_sum / reps as f64).ln());
    }
    // least-squares slope
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    eprintln!("rqmc error slope: {slope:.3}");
    let pass = slope <= -0.7;
    report(3, "RQMC convergence rate", pass);
    assert!(pass);
}

// ---------- criteria 4 and 5 (shared simulations) ----------

fn k6_sim(n: usize, seed: u64) -> gcmix::simulate::SimOutput {
    simulate(&SimConfig {
        n,
        n_continuous: 2,
        n_binary: 2,
        n_ordinal: 2,
        ordinal_levels: 5,
        n_multinomial: 0,
        multinomial_levels: 3,
        missing_rate: 0.3,
        wishart_dof: 0,
        marginal: ContinuousMarginal::StdExponential,
        seed,
    })
    .unwrap()
}

fn recovery_fit_config(seed: u64, n: usize) -> FitConfig {
    let mut cfg = FitConfig::default_with_seed(seed);
    // equalize optimizer steps across sample sizes so every fit reaches
    // its statistical floor rather than its optimization budget; early
    // stopping trims the small-n fits that converge sooner
    cfg.epochs = 24 * 8192 / n;
    cfg.learning_rate = 2e-2;
    cfg.batch_size = 200;
    cfg.window = 3;
    cfg.tolerance = 2e-4;
    cfg.rqmc.min_samples = 256;
    cfg.rqmc.max_samples = 2048;
    cfg.rqmc.rel_tol = 2e-2;
    cfg
}

#[test]
fn criteria_4_and_5_recovery_and_imputation() {
    let n_reps = 10;
    let ns = [512usize, 2048, 8192];
    let mut medians = vec![];
    // per replicate at n = 2048: fitted model + simulation for criterion 5
    let mut c5_material = vec![];

    for (ni, &n) in ns.iter().enumerate() {
        let mut errs = vec![];
        for rep in 0..n_reps {
            let seed = 101 + (ni * n_reps + rep) as u64;
            let sim = k6_sim(n, seed);
            let t0 = Instant::now();
            let (params, marginals, layout, _) =
                fit(&sim.masked, &sim.schema, &recovery_fit_config(seed, n)).unwrap();
            let (sigma_hat, _) = params.decode(&layout);
            let err = metrics::relative_sigma_error(&sim.sigma, &sigma_hat).unwrap();
            eprintln!(
                "n={n} rep={rep}: rel sigma err {err:.4} ({:.1}s)",
                t0.elapsed().as_secs_f64()
            );
            errs.push(err);
            if n == 2048 {
                let model = FittedModel::new(sim.schema.clone(), params, marginals);
                c5_material.push((sim, model));
            }
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = 0.5 * (errs[n_reps / 2 - 1] + errs[n_reps / 2]);
        eprintln!("n={n}: median rel sigma err {med:.4}");
        medians.push(med);
    }

    // criterion 4: strictly decreasing medians, slope in [-0.75, -0.3]
    let decreasing = medians[0] > medians[1] && medians[1] > medians[2];
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    eprintln!("recovery slope: {slope:.3}");
    let pass4 = decreasing && (-0.75..=-0.3).contains(&slope);
    report(4, "sqrt-n parameter recovery", pass4);

    // criterion 5: imputation quality on the n = 2048 replicates
    let mut smae_ok = true;
    let mut argmax_beats_median = 0usize;
    // pooled ordinal classification errors over all replicates
    let (mut pool_t, mut pool_arg, mut pool_med, mut pool_base) =
        (vec![], vec![], vec![], vec![]);
    for (rep, (sim, model)) in c5_material.iter().enumerate() {
        let cfg = RqmcConfig::imputation(7000 + rep as u64);
        let (argmax_done, _) = impute_dataset(&sim.masked, model, &cfg, ImputeRule::Argmax).unwrap();
        let (median_done, _) = impute_dataset(&sim.masked, model, &cfg, ImputeRule::Median).unwrap();
        let layout = LatentLayout::new(&sim.schema);

        let mut arg_ord_t = vec![];
        let mut arg_ord_x = vec![];
        let mut med_ord_x = vec![];
        for (c, var) in sim.schema.variables.iter().enumerate() {
            // masked-cell triples for this column
            let mut truth = vec![];
            let mut imputed = vec![];
            let mut med_imputed = vec![];
            let mut observed = vec![];
            for r in 0..sim.masked.n_rows {
                match sim.masked.get(r, c) {
                    None => {
                        truth.push(sim.complete.get(r, c).unwrap());
                        imputed.push(argmax_done.get(r, c).unwrap());
                        med_imputed.push(median_done.get(r, c).unwrap());
                    }
                    Some(v) => observed.push(v),
                }
            }
            // (a) SMAE < 1 wherever the variable is informative; the
            // median rule is the MAE-minimizing imputation, so SMAE (an
            // absolute-error metric) is scored on it
            let max_corr = (0..layout.w_eff)
                .filter(|&j| j != layout.offsets[c])
                .map(|j| sim.sigma[(layout.offsets[c], j)].abs())
                .fold(0.0f64, f64::max);
            if max_corr > 0.3 {
                if let Some(s) = metrics::smae(&truth, &med_imputed, &observed) {
                    if s >= 1.0 {
                        eprintln!("rep {rep} var {c}: smae {s:.3} with max corr {max_corr:.2}");
                        smae_ok = false;
                    }
                }
            }
            if matches!(var.kind, VariableKind::Ordinal { .. }) {
                arg_ord_t.extend(truth.iter().map(|&v| v as u32));
                arg_ord_x.extend(imputed.iter().map(|&v| v as u32));
                med_ord_x.extend(med_imputed.iter().map(|&v| v as u32));
                // (c) marginal-mode baseline, pooled over all replicates
                let mode = {
                    let mut counts = std::collections::HashMap::new();
                    for &v in &observed {
                        *counts.entry(v as u32).or_insert(0usize) += 1;
                    }
                    counts
                        .into_iter()
                        .max_by_key(|&(cat, n)| (n, std::cmp::Reverse(cat)))
                        .unwrap()
                        .0
                };
                pool_t.extend(truth.iter().map(|&v| v as u32));
                pool_arg.extend(imputed.iter().map(|&v| v as u32));
                pool_med.extend(med_imputed.iter().map(|&v| v as u32));
                pool_base.extend(std::iter::repeat(mode).take(truth.len()));
            }
        }
        let e_arg = metrics::classification_error(&arg_ord_t, &arg_ord_x).unwrap();
        let e_med = metrics::classification_error(&arg_ord_t, &med_ord_x).unwrap();
        if e_arg <= e_med {
            argmax_beats_median += 1;
        }
    }
    let e_arg = metrics::classification_error(&pool_t, &pool_arg).unwrap();
    let e_med = metrics::classification_error(&pool_t, &pool_med).unwrap();
    let e_base = metrics::classification_error(&pool_t, &pool_base).unwrap();
    let both_beat_baseline = e_arg < e_base && e_med < e_base;
    eprintln!(
        "pooled ordinal classification error: argmax {e_arg:.3} median {e_med:.3} baseline {e_base:.3}"
    );
    let pass5 = smae_ok && argmax_beats_median >= 7 && both_beat_baseline;
    eprintln!("argmax <= median on ordinal in {argmax_beats_median}/10 replicates");
    report(5, "imputation quality", pass5);
    assert!(pass4 && pass5);
}

// ---------- criterion 6 ----------

#[test]
fn criterion_6_multinomial_correctness() {
    let schema = Schema::new(vec![
        Variable { name: "m".into(), kind: VariableKind::Multinomial { levels: 3 } },
        Variable { name: "b".into(), kind: VariableKind::Binary },
        Variable { name: "x".into(), kind: VariableKind::Continuous },
    ])
    .unwrap();
    let layout = LatentLayout::new(&schema);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5506);
    let mut pass = true;

    for draw in 0..20u64 {
        // random covariance: unit diagonal on binary/continuous, free
        // scale on the multinomial block
        let sigma = {
            let raw = random_corr(layout.w_eff, &mut rng);
            let mut s = gcmix::model::rescale_to_unit_diagonal(&layout, &raw);
            for c in 0..layout.w_eff {
                if !layout.diag_constrained(c) {
                    let scale: f64 = rng.gen_range(0.6..1.8);
                    for j in 0..layout.w_eff {
                        s[(c, j)] *= scale.sqrt();
                        s[(j, c)] *= scale.sqrt();
                    }
                }
            }
            s
        };
        let mu: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let params = match CopulaParams::encode(&layout, &sigma, &mu) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let sorted: Vec<f64> = (0..2001).map(|i| (i as f64 - 1000.0) / 250.0).collect();
        let marginals = vec![
            gcmix::marginals::MarginalModel::Multinomial { freqs: vec![1.0 / 3.0; 3] },
            gcmix::marginals::MarginalModel::Binary { p_hat: phi(mu[2]) },
            gcmix::marginals::MarginalModel::Continuous { sorted: sorted.clone() },
        ];
        let model = FittedModel::new(schema.clone(), params.clone(), marginals);

        // observe binary = 1 and a continuous value; impute the multinomial
        let x_obs = rng.gen_range(-1.5..1.5);
        let zhat = gcmix::marginals::continuous_to_latent(&sorted, x_obs);
        let res = impute_row(
            &[None, Some(1.0), Some(x_obs)],
            0,
            &model,
            &RqmcConfig::imputation(4000 + draw),
        )
        .unwrap();
        let (_, CellImputation::Discrete { probabilities, .. }) = &res.cells[0] else {
            panic!("expected discrete cell");
        };

        // brute-force latent-argmax rejection sampler
        let (sigma_full, mu_full) = params.decode(&layout);
        // condition on the continuous latent (coordinate 3)
        let c = 3usize;
        let others = [0usize, 1, 2];
        let mut cond_mean = DVector::zeros(3);
        let mut cond_cov = DMatrix::zeros(3, 3);
        for (i, &a) in others.iter().enumerate() {
            cond_mean[i] =
                mu_full[a] + sigma_full[(a, c)] / sigma_full[(c, c)] * (zhat - mu_full[c]);
            for (j, &b) in others.iter().enumerate() {
                cond_cov[(i, j)] =
                    sigma_full[(a, b)] - sigma_full[(a, c)] * sigma_full[(c, b)] / sigma_full[(c, c)];
            }
        }
        let l = cond_cov.clone().cholesky().unwrap();
        let mut counts = [0usize; 3];
        let mut kept = 0usize;
        let mut srng = ChaCha8Rng::seed_from_u64(0xD0_0D + draw);
        for _ in 0..1_000_000 {
            let u = DVector::from_fn(3, |_, _| srng.sample::<f64, _>(StandardNormal));
            let y = &cond_mean + l.l() * u;
            if y[2] <= 0.0 {
                continue; // binary latent must be positive
            }
            kept += 1;
            let cat = if y[0] <= 0.0 && y[1] <= 0.0 {
                0
            } else if y[0] >= y[1] {
                1
            } else {
                2
            };
            counts[cat] += 1;
        }
        let tv: f64 = (0..3)
            .map(|g| (probabilities[g] - counts[g] as f64 / kept as f64).abs())
            .sum::<f64>()
            / 2.0;
        if tv > 0.02 {
            eprintln!("draw {draw}: tv {tv:.4} (probs {probabilities:?})");
            pass = false;
        }

        // likelihood of an observed multinomial row against dense quadrature
        let cat = (draw % 3) as u32;
        let term = ObservationTerm {
            row: 0,
            cont_coords: vec![3],
            zhat: vec![zhat],
            disc: vec![
                DiscreteObs::Multinomial { coords: vec![0, 1], category: cat },
                DiscreteObs::Interval { coord: 2, lower: 0.0, upper: f64::INFINITY },
            ],
        };
        let ev = LikelihoodEvaluator::new(&layout, &params, std::slice::from_ref(&term)).unwrap();
        let tight = RqmcConfig {
            min_samples: 100_000,
            max_samples: 1_000_000,
            rel_tol: 1e-4,
            abs_tol: 0.0,
            n_randomizations: 8,
            seed: 6000 + draw,
        };
        let est = loglik_term(&term, &ev, &tight).unwrap();

        // oracle: exact continuous density times a quadrature box
        // probability in the contrast coordinates
        let log_dens = -0.5
            * ((2.0 * std::f64::consts::PI * sigma_full[(c, c)]).ln()
                + (zhat - mu_full[c]).powi(2) / sigma_full[(c, c)]);
        let (t_mat, lo, hi): (DMatrix<f64>, Vec<f64>, Vec<f64>) = match cat {
            0 => (
                DMatrix::from_row_slice(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]),
                vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
                vec![0.0, 0.0, f64::INFINITY],
            ),
            1 => (
                DMatrix::from_row_slice(3, 3, &[-1., 1., 0., -1., 0., 0., 0., 0., 1.]),
                vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
                vec![0.0, 0.0, f64::INFINITY],
            ),
            _ => (
                DMatrix::from_row_slice(3, 3, &[1., -1., 0., 0., -1., 0., 0., 0., 1.]),
                vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
                vec![0.0, 0.0, f64::INFINITY],
            ),
        };
        let qp = GaussianParams {
            mean: &t_mat * &cond_mean,
            cov: &t_mat * &cond_cov * t_mat.transpose(),
        };
        let qbox = IntegrationBox::new(lo, hi).unwrap();
        let oracle = log_dens + quad_box_prob(&qbox, &qp).ln();
        if (est.value - oracle).abs() > 1e-3 {
            eprintln!(
                "draw {draw}: loglik {} vs quadrature {oracle} (diff {:.2e})",
                est.value,
                (est.value - oracle).abs()
            );
            pass = false;
        }
    }
    report(6, "multinomial correctness", pass);
    assert!(pass);
}

// ---------- criterion 7 ----------

#[test]
fn criterion_7_likelihood_reduction() {
    // With no multinomial variables the collapsed likelihood (exact
    // density times conditional box probability) must agree with a direct
    // full-dimensional integration where the observed continuous latents
    // are boxed into narrow windows.
    let schema = Schema::new(vec![
        Variable { name: "x1".into(), kind: VariableKind::Continuous },
        Variable { name: "x2".into(), kind: VariableKind::Continuous },
        Variable { name: "b".into(), kind: VariableKind::Binary },
        Variable { name: "o".into(), kind: VariableKind::Ordinal { levels: 4 } },
    ])
    .unwrap();
    let layout = LatentLayout::new(&schema);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5507);
    let cuts: Vec<f64> = (1..4)
        .map(|j| gcmix::norm::phi_inv(j as f64 / 4.0))
        .collect();
    let mut pass = true;

    for i in 0..20u64 {
        let sigma = {
            let raw = random_corr(4, &mut rng);
            gcmix::model::rescale_to_unit_diagonal(&layout, &raw)
        };
        let mu_b = rng.gen_range(-0.4..0.4);
        let params = CopulaParams::encode(&layout, &sigma, &[mu_b]).unwrap();
        let (sigma_full, mu_full) = params.decode(&layout);

        // random row: every variable observed with probability 0.7, at
        // least one continuous and one discrete kept
        let z1 = rng.gen_range(-1.2..1.2);
        let z2 = rng.gen_range(-1.2..1.2);
        let bval = rng.gen::<bool>();
        let oval = rng.gen_range(0..4u32);
        let keep: Vec<bool> = (0..4).map(|_| rng.gen::<f64>() < 0.7).collect();
        let mut cont_coords = vec![];
        let mut zhat = vec![];
        let mut disc = vec![];
        if keep[0] {
            cont_coords.push(0);
            zhat.push(z1);
        }
        if keep[1] {
            cont_coords.push(1);
            zhat.push(z2);
        }
        if keep[2] {
            let (lo, hi) = if bval {
                (0.0, f64::INFINITY)
            } else {
                (f64::NEG_INFINITY, 0.0)
            };
            disc.push(DiscreteObs::Interval { coord: 2, lower: lo, upper: hi });
        }
        if keep[3] {
            let lo = if oval == 0 { f64::NEG_INFINITY } else { cuts[oval as usize - 1] };
            let hi = if oval == 3 { f64::INFINITY } else { cuts[oval as usize] };
            disc.push(DiscreteObs::Interval { coord: 3, lower: lo, upper: hi });
        }
        if cont_coords.is_empty() || disc.is_empty() {
            continue;
        }
        let term = ObservationTerm { row: 0, cont_coords: cont_coords.clone(), zhat: zhat.clone(), disc: disc.clone() };
        let ev = LikelihoodEvaluator::new(&layout, &params, std::slice::from_ref(&term)).unwrap();
        let tight = RqmcConfig {
            min_samples: 200_000,
            max_samples: 2_000_000,
            rel_tol: 3e-5,
            abs_tol: 0.0,
            n_randomizations: 8,
            seed: 7100 + i,
        };
        let collapsed = loglik_term(&term, &ev, &tight).unwrap();

        // direct path: narrow windows around the observed latents
        let h = 1e-3;
        let obs: Vec<usize> = (0..4).filter(|&v| keep[v]).collect();
        let mut lo = vec![];
        let mut hi = vec![];
        for &v in &obs {
            if v < 2 {
                let z = if v == 0 { z1 } else { z2 };
                lo.push(z - 0.5 * h);
                hi.push(z + 0.5 * h);
            } else {
                let d = disc
                    .iter()
                    .find_map(|d| match d {
                        DiscreteObs::Interval { coord, lower, upper } if *coord == v => {
                            Some((*lower, *upper))
                        }
                        _ => None,
                    })
                    .unwrap();
                lo.push(d.0);
                hi.push(d.1);
            }
        }
        let sub_cov = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma_full[(obs[a], obs[b])]);
        let sub_mean = DVector::from_fn(obs.len(), |a, _| mu_full[obs[a]]);
        let p = GaussianParams { mean: sub_mean, cov: sub_cov };
        let direct = integrate(
            &IntegrationBox::new(lo, hi).unwrap(),
            &p,
            &GSpec::Constant1,
            &tight,
        )
        .unwrap()
        .0;
        let direct_log = direct.value.ln() - (cont_coords.len() as f64) * h.ln();
        let tol = 3.0 * (collapsed.error_estimate + direct.error_estimate / direct.value) + 1e-3;
        if (collapsed.value - direct_log).abs() > tol {
            eprintln!(
                "row {i}: collapsed {} direct {} (diff {:.2e}, tol {:.2e})",
                collapsed.value,
                direct_log,
                (collapsed.value - direct_log).abs(),
                tol
            );
            pass = false;
        }
    }
    report(7, "likelihood path reduction", pass);
    assert!(pass);
}

// ---------- criterion 8 ----------

#[test]
fn criterion_8_determinism() {
    use std::process::Command;
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gcmix");
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    std::fs::write(
        dir.path().join("sim.cfg"),
        "n = 200\nn_continuous = 1\nn_binary = 1\nn_ordinal = 1\nordinal_levels = 3\nn_multinomial = 1\nmultinomial_levels = 3\nmissing_rate = 0.3\nseed = 5\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["simulate", "--config", &path("sim.cfg"), "--out-prefix", &path("d")]);

    let mut fit_outputs = vec![];
    let mut impute_outputs = vec![];
    for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let model = path(&format!("model_{tag}.json"));
        run(&[
            "fit",
            "--data", &path("d_masked.csv"),
            "--schema", &path("d_schema.json"),
            "--out", &model,
            "--epochs", "3",
            "--seed", "11",
            "--threads", threads,
        ]);
        let imputed = path(&format!("imputed_{tag}.csv"));
        run(&[
            "impute",
            "--data", &path("d_masked.csv"),
            "--model", &model,
            "--out", &imputed,
            "--seed", "13",
            "--threads", threads,
        ]);
        fit_outputs.push(std::fs::read(&model).unwrap());
        impute_outputs.push(std::fs::read(&imputed).unwrap());
    }
    let pass = fit_outputs[0] == fit_outputs[1]
        && fit_outputs[0] == fit_outputs[2]
        && impute_outputs[0] == impute_outputs[1]
        && impute_outputs[0] == impute_outputs[2];
    report(8, "determinism", pass);
    assert!(pass);
}
