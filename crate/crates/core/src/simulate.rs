//! Synthetic data generation from the latent Gaussian model, for testing
//! and benchmarking: random correlation structure from a rescaled Wishart
//! draw, thresholded/argmax discrete observations, MCAR masking.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DataTable, Schema, Variable, VariableKind};
use crate::error::{Error, Result};
use crate::model::LatentLayout;
use crate::norm::{phi, phi_inv};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum ContinuousMarginal {
    /// x = -ln(1 - Phi(z)): standard exponential observed scale.
    StdExponential,
    /// x = z: the latent normal is observed directly.
    Normal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub n_continuous: usize,
    pub n_binary: usize,
    pub n_ordinal: usize,
    pub ordinal_levels: u32,
    pub n_multinomial: usize,
    pub multinomial_levels: u32,
    pub missing_rate: f64,
    /// Wishart degrees of freedom; 0 means "latent dimension".
    pub wishart_dof: usize,
    pub marginal: ContinuousMarginal,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            n_continuous: 2,
            n_binary: 2,
            n_ordinal: 2,
            ordinal_levels: 5,
            n_multinomial: 0,
            multinomial_levels: 3,
            missing_rate: 0.3,
            wishart_dof: 0,
            marginal: ContinuousMarginal::StdExponential,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn schema(&self) -> Result<Schema> {
        let mut vars = Vec::new();
        let mut push = |prefix: &str, count: usize, kind: &dyn Fn() -> VariableKind| {
            for i in 0..count {
                vars.push(Variable {
                    name: format!("{prefix}{i}"),
                    kind: kind(),
                });
            }
        };
        push("x", self.n_continuous, &|| VariableKind::Continuous);
        push("b", self.n_binary, &|| VariableKind::Binary);
        push("o", self.n_ordinal, &|| VariableKind::Ordinal {
            levels: self.ordinal_levels,
        });
        push("m", self.n_multinomial, &|| VariableKind::Multinomial {
            levels: self.multinomial_levels,
        });
        Schema::new(vars)
    }

    fn validate(&self, w_eff: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Schema(format!(
                "missing rate {} outside [0, 1)",
                self.missing_rate
            )));
        }
        if self.wishart_dof != 0 && self.wishart_dof < w_eff {
            return Err(Error::Schema(format!(
                "wishart dof {} below latent dimension {w_eff}",
                self.wishart_dof
            )));
        }
        Ok(())
    }
}

pub struct SimOutput {
    pub schema: Schema,
    pub complete: DataTable,
    pub masked: DataTable,
    /// True covariance of the non-reference latent coordinates.
    pub sigma: DMatrix<f64>,
}

/// Wishart(dof, I) draw of the given size via the Bartlett decomposition,
/// scaled by 1/dof so entries are O(1).
fn wishart(dim: usize, dof: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let chi = ChiSquared::new((dof - i) as f64).unwrap();
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    (&a * a.transpose()) / dof as f64
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    let schema = config.schema()?;
    let layout = LatentLayout::new(&schema);
    let w = layout.w_eff;
    config.validate(w)?;
    let dof = if config.wishart_dof == 0 { w } else { config.wishart_dof };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut sigma = wishart(w, dof, &mut rng);
    // unit variance on thresholded coordinates; multinomial blocks keep
    // their simulated scale
    let scale: Vec<f64> = (0..w)
        .map(|c| {
            if layout.diag_constrained(c) {
                1.0 / sigma[(c, c)].sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for i in 0..w {
        for j in 0..w {
            sigma[(i, j)] *= scale[i] * scale[j];
        }
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;

    let k = schema.variables.len();
    let mut complete = DataTable::empty(k);
    let mut masked = DataTable::empty(k);
    let ordinal_cuts: Vec<f64> = (1..config.ordinal_levels)
        .map(|j| phi_inv(j as f64 / config.ordinal_levels as f64))
        .collect();

    for _ in 0..config.n {
        let u = DVector::from_fn(w, |_, _| StandardNormal.sample(&mut rng));
        let z = chol.l() * u;
        let mut row = Vec::with_capacity(k);
        for (v, var) in schema.variables.iter().enumerate() {
            let c0 = layout.offsets[v];
            let x = match var.kind {
                VariableKind::Continuous => match config.marginal {
                    ContinuousMarginal::StdExponential => -(-phi(z[c0])).ln_1p(),
                    ContinuousMarginal::Normal => z[c0],
                },
                VariableKind::Binary => {
                    if z[c0] > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                VariableKind::Ordinal { .. } => {
                    ordinal_cuts.iter().filter(|&&t| z[c0] > t).count() as f64
                }
                VariableKind::Multinomial { .. } => {
                    // reference latent is identically zero
                    let mut best = 0usize;
                    let mut best_val = 0.0;
                    for (g, c) in layout.coords(v).enumerate() {
                        if z[c] > best_val {
                            best_val = z[c];
                            best = g + 1;
                        }
                    }
                    best as f64
                }
            };
            row.push(Some(x));
        }
        complete.push_row(&row);
        let masked_row: Vec<Option<f64>> = row
            .iter()
            .map(|x| {
                if rng.gen::<f64>() < config.missing_rate {
                    None
                } else {
                    *x
                }
            })
            .collect();
        masked.push_row(&masked_row);
    }

    Ok(SimOutput {
        schema,
        complete,
        masked,
        sigma,
    })
}
