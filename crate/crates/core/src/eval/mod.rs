//! Accuracy metrics and the experiment runner.

mod config;
mod run;

pub use config::{FilterKind, FilterOptions, GraphSource, RunConfig};
pub use run::{
    evaluate_trajectory, run, run_cells, run_filter, write_metrics, write_summary, write_timings,
    CellResult, MetricRow, RunSummary, SummaryCell, METRIC_HEADER,
};

use nalgebra::Vector4;

use crate::error::{Error, Result};
use crate::motion::GroundState;

/// Weighted root mean squared distance between particle estimates and the
/// true ground state, `√(Σ w_j ‖x̂_j − x‖²)`. With uniform weights this is
/// `√((1/N) Σ ‖x̂_j − x‖²)`.
pub fn rmse(estimates: &[Vector4<f64>], weights: &[f64], truth: &GroundState) -> f64 {
    let x = truth.to_vector();
    estimates
        .iter()
        .zip(weights)
        .map(|(e, w)| w * (e - x).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Linearly interpolated empirical quantile of sorted data (the "type 7"
/// definition: position `(n − 1)·p`).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(lo, median, hi)` at quantiles `(1 − level)/2`, `0.5`, `1 − (1 − level)/2`.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidParameter(format!(
            "credible level must lie in [0, 1], got {level}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&sorted, tail),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 1.0 - tail),
    ))
}
