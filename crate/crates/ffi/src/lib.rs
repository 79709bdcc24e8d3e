//! C ABI for the gcmix library.
//!
//! The interface is deliberately small: load a fitted model from its JSON
//! file, inspect the schema, impute rows, and query per-cell category
//! probabilities. Handles are opaque pointers; every fallible call returns
//! an error code and leaves a human-readable message retrievable with
//! [`gcmix_last_error_message`] (thread-local, valid until the next
//! fallible call on the same thread).
//!
//! Missing values cross the boundary as NaN. Discrete variables use their
//! integer codes (0-based) stored in doubles, matching the CSV format.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gcmix::data::VariableKind;
use gcmix::imputer::{impute_row, CellImputation, FittedModel, ImputeRule};
use gcmix::io::load_model;
use gcmix::likelihood::term_seed;
use gcmix::mvn::RqmcConfig;
use gcmix::Error;

/// Success.
pub const GCMIX_OK: i32 = 0;
/// A required pointer argument was null.
pub const GCMIX_ERR_NULL_ARGUMENT: i32 = 1;
/// A string argument was not valid UTF-8.
pub const GCMIX_ERR_UTF8: i32 = 2;
/// File could not be read or written.
pub const GCMIX_ERR_IO: i32 = 3;
/// Model file rejected (bad format, version, or inconsistent contents).
pub const GCMIX_ERR_MODEL: i32 = 4;
/// An argument had the wrong length or an index was out of range.
pub const GCMIX_ERR_DIMENSION: i32 = 5;
/// Numerical failure (covariance not positive definite, bad data value).
pub const GCMIX_ERR_NUMERIC: i32 = 6;
/// Unexpected internal failure.
pub const GCMIX_ERR_INTERNAL: i32 = 7;

/// Impute discrete cells with the most probable category.
pub const GCMIX_RULE_ARGMAX: i32 = 0;
/// Impute binary/ordinal cells with the distribution median.
pub const GCMIX_RULE_MEDIAN: i32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_for(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) => GCMIX_ERR_IO,
        Error::ModelFile(_) | Error::Schema(_) => GCMIX_ERR_MODEL,
        Error::Dimension(_) => GCMIX_ERR_DIMENSION,
        Error::NotPositiveDefinite { .. }
        | Error::DegenerateColumn { .. }
        | Error::Data { .. }
        | Error::Diverged(_) => GCMIX_ERR_NUMERIC,
    }
}

fn fail(err: &Error) -> i32 {
    set_error(&err.to_string());
    code_for(err)
}

/// Runs `f` with panics converted to `GCMIX_ERR_INTERNAL` so they never
/// unwind across the C boundary.
fn guarded<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            GCMIX_ERR_INTERNAL
        }
    }
}

/// An opaque fitted-model handle.
pub struct GcmixModel {
    model: FittedModel,
    seed: u64,
}

/// Message describing the most recent error on this thread.
///
/// The pointer stays valid until the next failing call on the same thread.
/// Never returns null.
#[no_mangle]
pub extern "C" fn gcmix_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gcmix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a fitted model from the JSON file written by `gcmix fit`.
///
/// On success writes a handle to `*out`; free it with [`gcmix_model_free`].
/// # Safety
///
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gcmix_model_load(path: *const c_char, out: *mut *mut GcmixModel) -> i32 {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument");
            return GCMIX_ERR_NULL_ARGUMENT;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return GCMIX_ERR_UTF8;
            }
        };
        let file = match load_model(Path::new(path)) {
            Ok(f) => f,
            Err(e) => return fail(&e),
        };
        let (_, params) = match file.params() {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        let model = FittedModel::new(file.schema, params, file.marginals);
        *out = Box::into_raw(Box::new(GcmixModel {
            model,
            seed: file.seed,
        }));
        GCMIX_OK
    })
}

/// Frees a model handle. Passing null is a no-op.
/// # Safety
///
/// `model` must be a handle from [`gcmix_model_load`] not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn gcmix_model_free(model: *mut GcmixModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of variables (CSV columns) the model was fitted on.
/// # Safety
///
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gcmix_model_n_variables(model: *const GcmixModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).model.schema.variables.len()
}

/// Number of categories of variable `index`: 1 for continuous, 2 for
/// binary, the level count for ordinal/multinomial. Returns 0 if the
/// handle is null or the index is out of range.
/// # Safety
///
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gcmix_model_n_categories(model: *const GcmixModel, index: usize) -> usize {
    if model.is_null() {
        return 0;
    }
    match (&(*model).model.schema.variables).get(index) {
        Some(v) => match &v.kind {
            VariableKind::Continuous => 1,
            VariableKind::Binary => 2,
            VariableKind::Ordinal { levels } | VariableKind::Multinomial { levels } => {
                *levels as usize
            }
        },
        None => 0,
    }
}

/// Copies the name of variable `index` into `buf` (NUL-terminated,
/// truncated to `buf_len`). Returns the full name length in bytes,
/// excluding the terminator, or -1 on a bad handle or index.
/// # Safety
///
/// `model` must be a live handle or null; `buf` must point to `buf_len` writable bytes (or be null).
#[no_mangle]
pub unsafe extern "C" fn gcmix_model_variable_name(
    model: *const GcmixModel,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> isize {
    if model.is_null() {
        return -1;
    }
    let name = match (&(*model).model.schema.variables).get(index) {
        Some(v) => v.name.as_bytes(),
        None => return -1,
    };
    if !buf.is_null() && buf_len > 0 {
        let n = name.len().min(buf_len - 1);
        ptr::copy_nonoverlapping(name.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    name.len() as isize
}

/// Copies the latent correlation matrix (row-major, `w x w` where `w` is
/// the latent dimension) into `out`, which must hold `out_len` doubles.
/// Returns the latent dimension, or -1 if the handle is null, or -2 if
/// `out` is too small (call with `out` null to query the size).
/// # Safety
///
/// `model` must be a live handle or null; `out` must point to `out_len` writable doubles (or be null).
#[no_mangle]
pub unsafe extern "C" fn gcmix_model_latent_correlation(
    model: *const GcmixModel,
    out: *mut f64,
    out_len: usize,
) -> isize {
    if model.is_null() {
        return -1;
    }
    let sigma = &(*model).model.sigma;
    let w = sigma.nrows();
    if out.is_null() {
        return w as isize;
    }
    if out_len < w * w {
        return -2;
    }
    for i in 0..w {
        for j in 0..w {
            *out.add(i * w + j) = sigma[(i, j)];
        }
    }
    w as isize
}

fn rule_from(rule: i32) -> Option<ImputeRule> {
    match rule {
        GCMIX_RULE_ARGMAX => Some(ImputeRule::Argmax),
        GCMIX_RULE_MEDIAN => Some(ImputeRule::Median),
        _ => None,
    }
}

struct RowImputation {
    values: Vec<f64>,
    cells: Vec<(usize, CellImputation)>,
}

fn impute_values(
    handle: &GcmixModel,
    values: &[f64],
    rule: ImputeRule,
    row_index: usize,
) -> Result<RowImputation, Error> {
    let opt: Vec<Option<f64>> = values
        .iter()
        .map(|&v| if v.is_nan() { None } else { Some(v) })
        .collect();
    let config = RqmcConfig::imputation(term_seed(handle.seed, row_index));
    let result = impute_row(&opt, row_index, &handle.model, &config)?;
    let mut filled = values.to_vec();
    for (col, cell) in &result.cells {
        filled[*col] = match cell {
            CellImputation::Continuous { value, .. } => *value,
            CellImputation::Discrete { argmax, median, .. } => match (rule, median) {
                (ImputeRule::Median, Some(m)) => *m as f64,
                _ => *argmax as f64,
            },
        };
    }
    Ok(RowImputation {
        values: filled,
        cells: result.cells,
    })
}

/// Imputes one row in place semantics: reads `n` doubles from `values`
/// (NaN marks a missing cell) and writes the completed row to `out`
/// (also `n` doubles; `values` and `out` may alias). `rule` is
/// `GCMIX_RULE_ARGMAX` or `GCMIX_RULE_MEDIAN`. `row_index` seeds the
/// integration, so a fixed (model, row_index, values) triple always
/// produces identical output; use the row's position in your dataset to
/// match the CLI's `impute` command.
/// # Safety
///
/// `model` must be a live handle; `values` must point to `n` readable doubles and `out` to `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn gcmix_impute_row(
    model: *const GcmixModel,
    values: *const f64,
    n: usize,
    rule: i32,
    row_index: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if model.is_null() || values.is_null() || out.is_null() {
            set_error("null argument");
            return GCMIX_ERR_NULL_ARGUMENT;
        }
        let handle = &*model;
        let k = handle.model.schema.variables.len();
        if n != k {
            set_error(&format!("row has {n} values but the model has {k} variables"));
            return GCMIX_ERR_DIMENSION;
        }
        let Some(rule) = rule_from(rule) else {
            set_error("rule must be GCMIX_RULE_ARGMAX or GCMIX_RULE_MEDIAN");
            return GCMIX_ERR_DIMENSION;
        };
        let input = std::slice::from_raw_parts(values, n);
        match impute_values(handle, input, rule, row_index) {
            Ok(r) => {
                ptr::copy_nonoverlapping(r.values.as_ptr(), out, n);
                GCMIX_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Conditional category probabilities for one missing discrete cell.
///
/// `values` is the row as in [`gcmix_impute_row`]; `column` must be a
/// discrete variable whose entry is NaN. Writes
/// `gcmix_model_n_categories(model, column)` probabilities to `probs`
/// (capacity `probs_len`).
/// # Safety
///
/// `model` must be a live handle; `values` must point to `n` readable doubles and `probs` to `probs_len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn gcmix_cell_probabilities(
    model: *const GcmixModel,
    values: *const f64,
    n: usize,
    column: usize,
    row_index: usize,
    probs: *mut f64,
    probs_len: usize,
) -> i32 {
    guarded(|| {
        if model.is_null() || values.is_null() || probs.is_null() {
            set_error("null argument");
            return GCMIX_ERR_NULL_ARGUMENT;
        }
        let handle = &*model;
        let k = handle.model.schema.variables.len();
        if n != k {
            set_error(&format!("row has {n} values but the model has {k} variables"));
            return GCMIX_ERR_DIMENSION;
        }
        let m = gcmix_model_n_categories(model, column);
        if m < 2 {
            set_error("column is not a discrete variable");
            return GCMIX_ERR_DIMENSION;
        }
        if probs_len < m {
            set_error(&format!("probs needs capacity {m}"));
            return GCMIX_ERR_DIMENSION;
        }
        let input = std::slice::from_raw_parts(values, n);
        if !input[column].is_nan() {
            set_error("requested column is not missing in this row");
            return GCMIX_ERR_DIMENSION;
        }
        match impute_values(handle, input, ImputeRule::Argmax, row_index) {
            Ok(r) => {
                for (col, cell) in &r.cells {
                    if *col == column {
                        if let CellImputation::Discrete { probabilities, .. } = cell {
                            ptr::copy_nonoverlapping(probabilities.as_ptr(), probs, m);
                            return GCMIX_OK;
                        }
                    }
                }
                set_error("no discrete imputation produced for this column");
                GCMIX_ERR_INTERNAL
            }
            Err(e) => fail(&e),
        }
    })
}
