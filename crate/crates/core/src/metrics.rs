//! Imputation and estimation quality metrics. Each returns `None` when
//! its denominator or input set is empty.

use nalgebra::DMatrix;

/// Scaled mean absolute error: MAE of the imputations divided by the MAE
/// of always predicting the median of the observed entries.
pub fn smae(truth: &[f64], imputed: &[f64], observed: &[f64]) -> Option<f64> {
    if truth.is_empty() || truth.len() != imputed.len() || observed.is_empty() {
        return None;
    }
    let med = median(observed)?;
    let mae: f64 = truth
        .iter()
        .zip(imputed)
        .map(|(t, x)| (t - x).abs())
        .sum::<f64>()
        / truth.len() as f64;
    let base: f64 = truth.iter().map(|t| (t - med).abs()).sum::<f64>() / truth.len() as f64;
    if base == 0.0 {
        return None;
    }
    Some(mae / base)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Relative Frobenius error ||est - truth||_F / ||truth||_F.
pub fn relative_sigma_error(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Option<f64> {
    if truth.shape() != est.shape() || truth.is_empty() {
        return None;
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return None;
    }
    Some((est - truth).norm() / denom)
}

pub fn rmse(truth: &[f64], imputed: &[f64]) -> Option<f64> {
    if truth.is_empty() || truth.len() != imputed.len() {
        return None;
    }
    let mse: f64 = truth
        .iter()
        .zip(imputed)
        .map(|(t, x)| (t - x) * (t - x))
        .sum::<f64>()
        / truth.len() as f64;
    Some(mse.sqrt())
}

/// Fraction of categorical imputations that miss the true label.
pub fn classification_error(truth: &[u32], imputed: &[u32]) -> Option<f64> {
    if truth.is_empty() || truth.len() != imputed.len() {
        return None;
    }
    let wrong = truth.iter().zip(imputed).filter(|(t, x)| t != x).count();
    Some(wrong as f64 / truth.len() as f64)
}
