//! Korobov rank-1 lattice rules with Cranley-Patterson random shifts.
//!
//! The generator table was precomputed by minimizing the P_2 worst-case
//! error criterion (product weights) over random candidate generators at
//! each prime size. Points for dimension `d` use the generating vector
//! `(1, a, a^2, ...) mod p` regardless of `d`, so the table only stores
//! `(p, a)` pairs. Sizes form a roughly geometric ladder, which is what
//! the adaptive integrator climbs until its error target is met.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (prime sample count, Korobov generator) ladder.
pub const KOROBOV_TABLE: &[(u64, u64)] = &[
    (31, 24),
    (47, 15),
    (71, 21),
    (107, 20),
    (163, 43),
    (251, 60),
    (379, 91),
    (569, 133),
    (857, 197),
    (1289, 743),
    (1949, 304),
    (2927, 618),
    (4391, 4159),
    (6599, 5482),
    (9901, 6857),
    (14867, 4741),
    (22303, 3841),
    (33457, 32159),
    (50207, 35033),
];

/// Index into the ladder of the smallest prime >= `n`, saturating at the top.
pub fn ladder_start(n: u64) -> usize {
    KOROBOV_TABLE
        .iter()
        .position(|&(p, _)| p >= n)
        .unwrap_or(KOROBOV_TABLE.len() - 1)
}

/// A single randomized Korobov lattice: `x_i = frac(i * z / p + shift)`.
pub struct ShiftedLattice {
    prime: u64,
    /// z_j / p for each dimension, precomputed.
    step: Vec<f64>,
    shift: Vec<f64>,
}

impl ShiftedLattice {
    /// Build the lattice at ladder index `rung` for `dim` dimensions.
    ///
    /// The shift stream is keyed on (seed, randomization index, rung) so
    /// any work partition reproduces the same points.
    pub fn new(rung: usize, dim: usize, seed: u64, randomization: u64) -> Self {
        let (p, a) = KOROBOV_TABLE[rung];
        let mut z = 1u64;
        let mut step = Vec::with_capacity(dim);
        for _ in 0..dim {
            step.push(z as f64 / p as f64);
            z = (z as u128 * a as u128 % p as u128) as u64;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ randomization.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                ^ (rung as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9),
        );
        let shift = (0..dim).map(|_| rng.gen::<f64>()).collect();
        ShiftedLattice { prime: p, step, shift }
    }

    pub fn len(&self) -> u64 {
        self.prime
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Write point `i` into `out` (one coordinate per dimension, in (0,1)).
    #[inline]
    pub fn point(&self, i: u64, out: &mut [f64]) {
        let i = i as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let v = (i * self.step[j] + self.shift[j]).fract();
            // baker (tent) transform: makes the periodized integrand
            // continuous, which sharpens the lattice convergence rate
            let v = 1.0 - (2.0 * v - 1.0).abs();
            // keep strictly inside (0,1) for the inverse CDF
            *o = v.clamp(1e-16, 1.0 - 1e-16);
        }
    }
}
