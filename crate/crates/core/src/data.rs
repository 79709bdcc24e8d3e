//! Variable schema and in-memory data tables with missingness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared type of a column. Discrete codes are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Binary,
    Ordinal { levels: u32 },
    Multinomial { levels: u32 },
}

impl VariableKind {
    pub fn is_discrete(&self) -> bool {
        !matches!(self, VariableKind::Continuous)
    }

    /// Number of categories; 0 for continuous.
    pub fn levels(&self) -> u32 {
        match self {
            VariableKind::Continuous => 0,
            VariableKind::Binary => 2,
            VariableKind::Ordinal { levels } | VariableKind::Multinomial { levels } => *levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

/// Ordered variable declarations; drives latent-dimension layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub variables: Vec<Variable>,
}

impl Schema {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        let s = Schema { variables };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name `{}`", v.name)));
            }
            match v.kind {
                VariableKind::Ordinal { levels } if levels < 2 => {
                    return Err(Error::Schema(format!(
                        "ordinal variable `{}` needs >= 2 levels, got {levels}",
                        v.name
                    )));
                }
                VariableKind::Multinomial { levels } if levels < 3 => {
                    return Err(Error::Schema(format!(
                        "multinomial variable `{}` needs >= 3 levels, got {levels}",
                        v.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }
}

/// Column-major table; discrete codes are stored as their f64 value.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub columns: Vec<Vec<Option<f64>>>,
    pub n_rows: usize,
}

impl DataTable {
    pub fn new(columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::Dimension("ragged columns in data table".into()));
        }
        Ok(DataTable { columns, n_rows })
    }

    pub fn empty(n_cols: usize) -> Self {
        DataTable {
            columns: vec![Vec::new(); n_cols],
            n_rows: 0,
        }
    }

    pub fn push_row(&mut self, row: &[Option<f64>]) {
        assert_eq!(row.len(), self.columns.len());
        for (col, x) in self.columns.iter_mut().zip(row) {
            col.push(*x);
        }
        self.n_rows += 1;
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.columns[col][row]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.columns[col][row].is_none()
    }

    /// Observed-column mask for a row, one flag per variable.
    pub fn observed_mask(&self, row: usize) -> Vec<bool> {
        self.columns.iter().map(|c| c[row].is_some()).collect()
    }

    /// Check every cell parses under the schema (discrete codes in range).
    pub fn check_against(&self, schema: &Schema) -> Result<()> {
        if self.n_cols() != schema.len() {
            return Err(Error::Dimension(format!(
                "table has {} columns but schema has {}",
                self.n_cols(),
                schema.len()
            )));
        }
        for (col, var) in schema.variables.iter().enumerate() {
            if !var.kind.is_discrete() {
                continue;
            }
            let levels = var.kind.levels() as f64;
            for (row, cell) in self.columns[col].iter().enumerate() {
                if let Some(v) = cell {
                    if v.fract() != 0.0 || *v < 0.0 || *v >= levels {
                        return Err(Error::Data {
                            row,
                            column: var.name.clone(),
                            reason: format!(
                                "code {v} out of range 0..{}",
                                var.kind.levels() - 1
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
