//! Conditional-expectation imputation. Each row needs one RQMC
//! integration: condition the latent Gaussian exactly on observed
//! continuous coordinates, restrict to the constraint box implied by
//! observed discrete values, and integrate means / category indicator
//! expectations of the missing coordinates in a single pass.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{DataTable, Schema, VariableKind};
use crate::error::{Error, Result};
use crate::likelihood::term_seed;
use crate::marginals::{continuous_from_latent, latent_value, LatentValue, MarginalModel};
use crate::model::{CopulaParams, LatentLayout};
use crate::mvn::{integrate, GSpec, GaussianParams, IntegrationBox, OneHotRule, OneHotSpec, RqmcConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum CellImputation {
    Continuous {
        value: f64,
        latent_mean: f64,
    },
    Discrete {
        probabilities: Vec<f64>,
        argmax: u32,
        /// Smallest category whose cumulative probability reaches 1/2;
        /// defined for binary and ordinal variables only.
        median: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub row: usize,
    /// (column, imputation) for each missing cell, ascending by column.
    pub cells: Vec<(usize, CellImputation)>,
    pub converged: bool,
    /// No variable observed: values are the marginal (unconditional) ones.
    pub fully_missing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeRule {
    Argmax,
    Median,
}

impl std::str::FromStr for ImputeRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "argmax" => Ok(ImputeRule::Argmax),
            "median" => Ok(ImputeRule::Median),
            other => Err(format!("unknown imputation rule `{other}`")),
        }
    }
}

/// A fitted model bundle, as needed for imputation.
pub struct FittedModel {
    pub schema: Schema,
    pub layout: LatentLayout,
    pub params: CopulaParams,
    pub marginals: Vec<MarginalModel>,
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
}

impl FittedModel {
    pub fn new(schema: Schema, params: CopulaParams, marginals: Vec<MarginalModel>) -> Self {
        let layout = LatentLayout::new(&schema);
        let (sigma, mu) = params.decode(&layout);
        FittedModel {
            schema,
            layout,
            params,
            marginals,
            sigma,
            mu,
        }
    }
}

pub fn impute_row(
    values: &[Option<f64>],
    row: usize,
    model: &FittedModel,
    config: &RqmcConfig,
) -> Result<ImputationResult> {
    let layout = &model.layout;

    // split the row into conditioning / constraint / target coordinates
    let mut c_coords: Vec<usize> = vec![];
    let mut zhat: Vec<f64> = vec![];
    struct Constraint {
        entries: Vec<(usize, f64)>, // (latent coord, weight)
        lower: f64,
        upper: f64,
    }
    let mut constraints: Vec<Constraint> = vec![];
    let mut u_coords: Vec<usize> = vec![];
    struct Target {
        column: usize,
        kind: TargetKind,
    }
    enum TargetKind {
        Continuous { u_pos: usize },
        Thresholded { u_pos: usize, cuts: Vec<f64> },
        Multinomial { u_pos: Vec<usize> },
    }
    let mut targets: Vec<Target> = vec![];

    for (v, var) in model.schema.variables.iter().enumerate() {
        let coord = layout.offsets[v];
        match values[v] {
            Some(x) => match latent_value(x, &model.marginals[v]) {
                LatentValue::Point(z) => {
                    c_coords.push(coord);
                    zhat.push(z);
                }
                LatentValue::Interval(lo, hi) => constraints.push(Constraint {
                    entries: vec![(coord, 1.0)],
                    lower: lo,
                    upper: hi,
                }),
                LatentValue::Category(cat) => {
                    let coords: Vec<usize> = layout.coords(v).collect();
                    if cat == 0 {
                        for &c in &coords {
                            constraints.push(Constraint {
                                entries: vec![(c, 1.0)],
                                lower: f64::NEG_INFINITY,
                                upper: 0.0,
                            });
                        }
                    } else {
                        let target = coords[cat as usize - 1];
                        for &c in &coords {
                            if c != target {
                                constraints.push(Constraint {
                                    entries: vec![(c, 1.0), (target, -1.0)],
                                    lower: f64::NEG_INFINITY,
                                    upper: 0.0,
                                });
                            }
                        }
                        constraints.push(Constraint {
                            entries: vec![(target, -1.0)],
                            lower: f64::NEG_INFINITY,
                            upper: 0.0,
                        });
                    }
                }
            },
            None => {
                let base = u_coords.len();
                let kind = match &var.kind {
                    VariableKind::Continuous => TargetKind::Continuous { u_pos: base },
                    VariableKind::Binary => TargetKind::Thresholded {
                        u_pos: base,
                        cuts: vec![0.0],
                    },
                    VariableKind::Ordinal { .. } => {
                        let MarginalModel::Ordinal { thresholds } = &model.marginals[v] else {
                            return Err(Error::Dimension("marginal/schema kind mismatch".into()));
                        };
                        TargetKind::Thresholded {
                            u_pos: base,
                            cuts: thresholds.clone(),
                        }
                    }
                    VariableKind::Multinomial { levels } => TargetKind::Multinomial {
                        u_pos: (base..base + *levels as usize - 1).collect(),
                    },
                };
                u_coords.extend(layout.coords(v));
                targets.push(Target { column: v, kind });
            }
        }
    }

    if targets.is_empty() {
        return Ok(ImputationResult {
            row,
            cells: vec![],
            converged: true,
            fully_missing: false,
        });
    }
    let fully_missing = c_coords.is_empty() && constraints.is_empty();

    // conditional moments of V = (targets, constrained coords) given the
    // observed continuous coordinates
    let q_coords: Vec<usize> = {
        let mut q: Vec<usize> = constraints
            .iter()
            .flat_map(|c| c.entries.iter().map(|&(coord, _)| coord))
            .collect();
        q.sort_unstable();
        q.dedup();
        q
    };
    let v_coords: Vec<usize> = u_coords.iter().chain(&q_coords).copied().collect();
    let nv = v_coords.len();
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| model.sigma[(rows[i], cols[j])])
    };
    let mut mu_bar = DVector::from_iterator(nv, v_coords.iter().map(|&c| model.mu[c]));
    let mut s_bar = sub(&v_coords, &v_coords);
    if !c_coords.is_empty() {
        let chol = sub(&c_coords, &c_coords)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
        let sigma_vc = sub(&v_coords, &c_coords);
        let b = chol.solve(&sigma_vc.transpose()).transpose();
        mu_bar += &b * DVector::from_column_slice(&zhat);
        s_bar -= b * sigma_vc.transpose();
    }

    // joint problem: identity rows for targets, contrast rows for the
    // observed-discrete constraints
    let nu = u_coords.len();
    let dim = nu + constraints.len();
    let mut r = DMatrix::zeros(dim, nv);
    for i in 0..nu {
        r[(i, i)] = 1.0;
    }
    let mut lower = vec![f64::NEG_INFINITY; dim];
    let mut upper = vec![f64::INFINITY; dim];
    let qpos = |coord: usize| {
        nu + q_coords.binary_search(&coord).expect("constraint coord present")
    };
    for (i, con) in constraints.iter().enumerate() {
        for &(coord, wgt) in &con.entries {
            r[(nu + i, qpos(coord))] = wgt;
        }
        lower[nu + i] = con.lower;
        upper[nu + i] = con.upper;
    }
    let params = GaussianParams {
        mean: &r * &mu_bar,
        cov: &r * &s_bar * r.transpose(),
    };
    let box_ = IntegrationBox::new(lower, upper)?;

    let mut mean_coords = vec![];
    let mut rules = vec![];
    for t in &targets {
        match &t.kind {
            TargetKind::Continuous { u_pos } => mean_coords.push(*u_pos),
            TargetKind::Thresholded { u_pos, cuts } => rules.push(OneHotRule::Thresholds {
                coord: *u_pos,
                cuts: cuts.clone(),
            }),
            TargetKind::Multinomial { u_pos } => rules.push(OneHotRule::ArgmaxWithReference {
                coords: u_pos.clone(),
            }),
        }
    }
    // with no observed-discrete constraints the conditional means are
    // exact Gaussian algebra; only discrete targets need integration
    let exact_means = constraints.is_empty();
    let g = GSpec::CategoryOneHot(OneHotSpec {
        mean_coords: if exact_means { vec![] } else { mean_coords.clone() },
        rules: rules.clone(),
    });
    let (cdf, outputs) = if exact_means && rules.is_empty() {
        (
            crate::mvn::RqmcEstimate {
                value: 1.0,
                error_estimate: 0.0,
                samples_used: 0,
                converged: true,
            },
            vec![],
        )
    } else {
        integrate(&box_, &params, &g, config)?
    };
    let mut converged = cdf.converged && outputs.iter().all(|o| o.converged);
    if cdf.value <= 0.0 {
        converged = false;
    }

    // normalized expectations; outputs follow the spec layout: means
    // first, then one rule block per discrete target
    let mut cells = vec![];
    let mut mean_idx = 0usize;
    let mut block = if exact_means { 0 } else { mean_coords.len() };
    for t in &targets {
        let cell = match &t.kind {
            TargetKind::Continuous { u_pos } => {
                let latent_mean = if exact_means {
                    mu_bar[*u_pos]
                } else {
                    let v = outputs[mean_idx].value / cdf.value;
                    mean_idx += 1;
                    v
                };
                let MarginalModel::Continuous { sorted } = &model.marginals[t.column] else {
                    return Err(Error::Dimension("marginal/schema kind mismatch".into()));
                };
                CellImputation::Continuous {
                    value: continuous_from_latent(sorted, latent_mean),
                    latent_mean,
                }
            }
            TargetKind::Thresholded { cuts, .. } => {
                let m = cuts.len() + 1;
                let probs = normalize(&outputs[block..block + m], cdf.value);
                block += m;
                discrete_cell(probs, true)
            }
            TargetKind::Multinomial { u_pos } => {
                let m = u_pos.len() + 1;
                let probs = normalize(&outputs[block..block + m], cdf.value);
                block += m;
                discrete_cell(probs, false)
            }
        };
        cells.push((t.column, cell));
    }

    Ok(ImputationResult {
        row,
        cells,
        converged,
        fully_missing,
    })
}

fn normalize(ests: &[crate::mvn::RqmcEstimate], cdf: f64) -> Vec<f64> {
    let mut p: Vec<f64> = ests.iter().map(|e| (e.value / cdf).max(0.0)).collect();
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        for x in &mut p {
            *x /= s;
        }
    } else {
        let u = 1.0 / p.len() as f64;
        p.fill(u);
    }
    p
}

fn discrete_cell(probs: Vec<f64>, has_median: bool) -> CellImputation {
    let argmax = probs
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |best, (i, &p)| {
            if p > best.1 {
                (i, p)
            } else {
                best
            }
        })
        .0 as u32;
    let median = has_median.then(|| {
        let mut cum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            cum += p;
            if cum >= 0.5 {
                return i as u32;
            }
        }
        probs.len() as u32 - 1
    });
    CellImputation::Discrete {
        probabilities: probs,
        argmax,
        median,
    }
}

/// Fill every missing cell. Observed cells are copied verbatim;
/// continuous cells take the conditional mean mapped through the fitted
/// marginal, discrete cells the requested category rule (multinomial
/// always argmax — it has no category order).
pub fn impute_dataset(
    data: &DataTable,
    model: &FittedModel,
    config: &RqmcConfig,
    rule: ImputeRule,
) -> Result<(DataTable, Vec<ImputationResult>)> {
    data.check_against(&model.schema)?;
    let results: Result<Vec<ImputationResult>> = (0..data.n_rows)
        .into_par_iter()
        .map(|row| {
            let values: Vec<Option<f64>> =
                (0..data.n_cols()).map(|c| data.get(row, c)).collect();
            let cfg = config.with_seed(term_seed(config.seed, row));
            impute_row(&values, row, model, &cfg)
        })
        .collect();
    let results = results?;

    let mut completed = data.clone();
    for res in &results {
        for (col, cell) in &res.cells {
            let filled = match cell {
                CellImputation::Continuous { value, .. } => *value,
                CellImputation::Discrete { argmax, median, .. } => match (rule, median) {
                    (ImputeRule::Median, Some(m)) => *m as f64,
                    _ => *argmax as f64,
                },
            };
            completed.columns[*col][res.row] = Some(filled);
        }
    }
    Ok((completed, results))
}
