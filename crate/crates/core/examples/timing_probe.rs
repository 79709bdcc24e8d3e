use gcmix::mvn::{integrate, GSpec, GaussianParams, IntegrationBox, RqmcConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_corr(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let mut s: DMatrix<f64> = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
    let d: Vec<f64> = (0..dim).map(|i| s[(i, i)].sqrt()).collect();
    for i in 0..dim {
        for j in 0..dim {
            s[(i, j)] /= d[i] * d[j];
        }
    }
    s
}

fn random_box(dim: usize, rng: &mut ChaCha8Rng) -> IntegrationBox {
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    for j in 0..dim {
        let kind = rng.gen_range(0..3);
        let a = rng.gen_range(-2.0..1.0);
        let b = a + rng.gen_range(0.5..3.0);
        match kind {
            0 => {
                lower[j] = a;
                upper[j] = b;
            }
            1 => {
                lower[j] = f64::NEG_INFINITY;
                upper[j] = b;
            }
            _ => {
                lower[j] = a;
                upper[j] = f64::INFINITY;
            }
        }
    }
    IntegrationBox::new(lower, upper).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5501);
    let mut by_dim = vec![(0.0f64, 0u64, 0u64); 9];
    for i in 0..100 {
        let dim = i % 8 + 1;
        let cov = random_corr(dim, &mut rng);
        let mean = DVector::from_fn(dim, |_, _| rng.gen_range(-0.5..0.5));
        let b = random_box(dim, &mut rng);
        let params = GaussianParams { mean, cov };
        let config = RqmcConfig {
            min_samples: 2000,
            max_samples: 2_000_000,
            rel_tol: 1e-4,
            abs_tol: 0.0,
            n_randomizations: 8,
            seed: 0x51D + i as u64,
        };
        let t0 = Instant::now();
        let (est, _) = integrate(&b, &params, &GSpec::Constant1, &config).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        by_dim[dim].0 += dt;
        by_dim[dim].1 += est.samples_used;
        by_dim[dim].2 += 1;
    }
    for dim in 1..=8 {
        let (t, s, c) = by_dim[dim];
        println!(
            "dim {dim}: avg {:.1} ms, avg samples {}",
            t / c as f64 * 1000.0,
            s / c
        );
    }
}
