//! Log-domain helpers shared by the filters.

use nalgebra::{Matrix2, Vector2};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln(Σ exp(x_i))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log weights in place so that they exponentiate to a unit sum.
///
/// Returns the log normalizer. If every weight is `-inf` the slice is left
/// untouched and `-inf` is returned.
pub fn normalize_log_weights(log_weights: &mut [f64]) -> f64 {
    let total = log_sum_exp(log_weights);
    if total.is_finite() {
        for w in log_weights.iter_mut() {
            *w -= total;
        }
    }
    total
}

/// Exponentiates normalized log weights.
pub fn to_probabilities(log_weights: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(log_weights);
    log_weights.iter().map(|w| (w - total).exp()).collect()
}

pub fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + variance.ln() + r * r / variance)
}

pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    (-0.5 * r * r / variance).exp() / (2.0 * PI * variance).sqrt()
}

/// Log density of a bivariate normal, via a Cholesky factor of `cov`.
pub fn log_normal_pdf2(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or(Error::SingularCovariance("bivariate density"))?;
    let r = x - mean;
    let z = chol
        .l()
        .solve_lower_triangular(&r)
        .expect("cholesky factor is invertible");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (2.0 * LN_2PI + log_det + z.norm_squared()))
}

/// Averages `m` with its transpose to scrub round-off asymmetry.
pub fn symmetrize<const D: usize>(
    m: &nalgebra::SMatrix<f64, D, D>,
) -> nalgebra::SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// Symmetric and positive semi-definite up to `-1e-9 * trace`.
pub fn is_valid_covariance<const D: usize>(m: &nalgebra::SMatrix<f64, D, D>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    let floor = -1e-9 * m.trace().abs().max(f64::MIN_POSITIVE);
    let dynamic = nalgebra::DMatrix::from_iterator(D, D, symmetrize(m).iter().copied());
    dynamic
        .symmetric_eigenvalues()
        .iter()
        .all(|&ev| ev >= floor)
}
