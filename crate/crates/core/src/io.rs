//! File formats: schema JSON, CSV data tables, the fitted-model JSON
//! file, and the flat key=value simulation config.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{DataTable, Schema, VariableKind};
use crate::error::{Error, Result};
use crate::marginals::MarginalModel;
use crate::model::{CopulaParams, LatentLayout};
use crate::simulate::{ContinuousMarginal, SimConfig};

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = std::fs::read_to_string(path)?;
    let schema: Schema =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{path:?}: {e}")))?;
    schema.validate()?;
    Ok(schema)
}

pub fn save_schema(path: &Path, schema: &Schema) -> Result<()> {
    let text = serde_json::to_string_pretty(schema).expect("schema serializes");
    Ok(std::fs::write(path, text)?)
}

/// Read a CSV whose header matches the schema names in order. Empty
/// cells and `NA` are missing; discrete cells must be integer codes in
/// range.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<DataTable> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = schema.variables.iter().map(|v| v.name.as_str()).collect();
    if headers.iter().collect::<Vec<_>>() != names {
        return Err(Error::Schema(format!(
            "csv header {:?} does not match schema columns {:?}",
            headers.iter().collect::<Vec<_>>(),
            names
        )));
    }
    let mut table = DataTable::empty(schema.len());
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() {
            return Err(Error::Data {
                row: r,
                column: String::new(),
                reason: format!("{} fields, expected {}", record.len(), schema.len()),
            });
        }
        let mut row = Vec::with_capacity(schema.len());
        for (c, var) in schema.variables.iter().enumerate() {
            let cell = record.get(c).unwrap().trim();
            if cell.is_empty() || cell == "NA" {
                row.push(None);
                continue;
            }
            let parsed = parse_cell(cell, &var.kind).map_err(|reason| Error::Data {
                row: r,
                column: var.name.clone(),
                reason,
            })?;
            row.push(Some(parsed));
        }
        table.push_row(&row);
    }
    Ok(table)
}

fn parse_cell(cell: &str, kind: &VariableKind) -> std::result::Result<f64, String> {
    match kind {
        VariableKind::Continuous => cell
            .parse::<f64>()
            .map_err(|_| format!("`{cell}` is not a number")),
        _ => {
            let code: u32 = cell
                .parse()
                .map_err(|_| format!("`{cell}` is not a non-negative integer code"))?;
            let levels = kind.levels();
            if code >= levels {
                return Err(format!("code {code} out of range 0..{levels}"));
            }
            Ok(code as f64)
        }
    }
}

pub fn save_csv(path: &Path, data: &DataTable, schema: &Schema) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(file, data, schema)
}

pub fn write_csv<W: Write>(writer: W, data: &DataTable, schema: &Schema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.variables.iter().map(|v| v.name.as_str()))?;
    for r in 0..data.n_rows {
        let row: Vec<String> = schema
            .variables
            .iter()
            .enumerate()
            .map(|(c, var)| match data.get(r, c) {
                None => String::new(),
                Some(x) if var.kind.is_discrete() => format!("{}", x as u32),
                Some(x) => format!("{x}"),
            })
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::ModelFile(format!("matrix csv: {e}")))?);
    }
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::ModelFile("ragged matrix csv".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk fitted model. JSON; floats survive a save/load roundtrip
/// bit-exactly (shortest-roundtrip serialization).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub schema: Schema,
    pub marginals: Vec<MarginalModel>,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub fit_config: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn params(&self) -> Result<(LatentLayout, CopulaParams)> {
        let layout = LatentLayout::new(&self.schema);
        if self.theta.len() != layout.n_params() {
            return Err(Error::ModelFile(format!(
                "theta has {} entries, layout needs {}",
                self.theta.len(),
                layout.n_params()
            )));
        }
        let params = CopulaParams {
            theta: nalgebra::DVector::from_column_slice(&self.theta),
        };
        Ok((layout, params))
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    let text = serde_json::to_string_pretty(model)
        .map_err(|e| Error::ModelFile(e.to_string()))?;
    Ok(std::fs::write(path, text)?)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    let model: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::ModelFile(format!("{path:?}: {e}")))?;
    if model.version > MODEL_FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "model format version {} is newer than supported version {}",
            model.version, MODEL_FORMAT_VERSION
        )));
    }
    model.schema.validate()?;
    Ok(model)
}

/// Flat `key=value` file mirroring the SimConfig fields. Lines starting
/// with `#` and blank lines are ignored.
pub fn parse_sim_config(text: &str) -> Result<SimConfig> {
    let mut kv = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Schema(format!("sim config line {}: expected key=value", lineno + 1))
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut config = SimConfig::default();
    for (k, v) in &kv {
        let bad = |e: &dyn std::fmt::Display| {
            Error::Schema(format!("sim config key `{k}`: {e}"))
        };
        match k.as_str() {
            "n" => config.n = v.parse().map_err(|e| bad(&e))?,
            "n_continuous" => config.n_continuous = v.parse().map_err(|e| bad(&e))?,
            "n_binary" => config.n_binary = v.parse().map_err(|e| bad(&e))?,
            "n_ordinal" => config.n_ordinal = v.parse().map_err(|e| bad(&e))?,
            "ordinal_levels" => config.ordinal_levels = v.parse().map_err(|e| bad(&e))?,
            "n_multinomial" => config.n_multinomial = v.parse().map_err(|e| bad(&e))?,
            "multinomial_levels" => {
                config.multinomial_levels = v.parse().map_err(|e| bad(&e))?
            }
            "missing_rate" => config.missing_rate = v.parse().map_err(|e| bad(&e))?,
            "wishart_dof" => config.wishart_dof = v.parse().map_err(|e| bad(&e))?,
            "seed" => config.seed = v.parse().map_err(|e| bad(&e))?,
            "marginal" => {
                config.marginal = match v.as_str() {
                    "std_exponential" => ContinuousMarginal::StdExponential,
                    "normal" => ContinuousMarginal::Normal,
                    other => {
                        return Err(bad(&format!(
                            "`{other}` (expected std_exponential or normal)"
                        )))
                    }
                }
            }
            other => return Err(Error::Schema(format!("unknown sim config key `{other}`"))),
        }
    }
    Ok(config)
}
