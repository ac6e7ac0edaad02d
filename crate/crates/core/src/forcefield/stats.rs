//! Force-accuracy statistics over pooled force components.

use crate::system::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("predicted has {predicted} configurations, reference has {reference}")]
    ConfigCount { predicted: usize, reference: usize },
    #[error("configuration {index}: predicted has {predicted} atoms, reference has {reference}")]
    AtomCount { index: usize, predicted: usize, reference: usize },
    #[error("no force components to compare")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceErrorStats {
    pub components: usize,
    /// Mean absolute error, eV/Å.
    pub mae: f64,
    /// Mean signed error, eV/Å.
    pub mean_error: f64,
    /// Standard deviation of the error about its mean, eV/Å.
    pub stddev: f64,
    pub rmse: f64,
    /// 1 - SS_res/SS_tot; None when the reference has zero variance.
    pub r_squared: Option<f64>,
    /// (reference, predicted) pairs for parity plots.
    #[serde(skip)]
    pub parity: Vec<[f64; 2]>,
}

pub fn force_error_stats(predicted: &[Vec<Vec3>], reference: &[Vec<Vec3>]) -> Result<ForceErrorStats, StatsError> {
    if predicted.len() != reference.len() {
        return Err(StatsError::ConfigCount { predicted: predicted.len(), reference: reference.len() });
    }
    for (index, (p, r)) in predicted.iter().zip(reference).enumerate() {
        if p.len() != r.len() {
            return Err(StatsError::AtomCount { index, predicted: p.len(), reference: r.len() });
        }
    }
    let parity: Vec<[f64; 2]> = predicted
        .iter()
        .zip(reference)
        .flat_map(|(p, r)| p.iter().zip(r).flat_map(|(a, b)| (0..3).map(move |k| [b[k], a[k]])))
        .collect();
    if parity.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = parity.len() as f64;
    let mean_error = parity.iter().map(|[r, p]| p - r).sum::<f64>() / n;
    let mae = parity.iter().map(|[r, p]| (p - r).abs()).sum::<f64>() / n;
    let ss_res: f64 = parity.iter().map(|[r, p]| (p - r) * (p - r)).sum();
    let var_err = parity.iter().map(|[r, p]| (p - r - mean_error).powi(2)).sum::<f64>() / n;
    let ref_mean = parity.iter().map(|[r, _]| r).sum::<f64>() / n;
    let ss_tot: f64 = parity.iter().map(|[r, _]| (r - ref_mean) * (r - ref_mean)).sum();
    // Rounding in the mean leaves a residue for constant references.
    let sum_r2: f64 = parity.iter().map(|[r, _]| r * r).sum();
    let r_squared = (ss_tot > 1e-24 * sum_r2).then(|| 1.0 - ss_res / ss_tot);
    Ok(ForceErrorStats {
        components: parity.len(),
        mae,
        mean_error,
        stddev: var_err.sqrt(),
        rmse: (ss_res / n).sqrt(),
        r_squared,
        parity,
    })
}
