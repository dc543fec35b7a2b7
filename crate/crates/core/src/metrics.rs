//! Validation metrics and cross-run aggregation.
//!
//! The per-output accuracy is the RMSE on the noise-free validation grid
//! divided by the output's range; the single comparison criterion is the
//! Euclidean norm of those per-output values.

use serde::{Deserialize, Serialize};

use crate::active::Leader;
use crate::error::{AosError, Result};
use crate::strategy::{CvScore, StrategyKind};

/// `sqrt(mean((y - y_hat)^2)) / truth_range`.
pub fn nrmse_val(predictions: &[f64], truths: &[f64], truth_range: f64) -> Result<f64> {
    if predictions.len() != truths.len() || truths.is_empty() {
        return Err(AosError::Contract(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if !(truth_range > 0.0) {
        return Err(AosError::Degenerate(format!("truth range {truth_range} is not positive")));
    }
    let sse: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok((sse / truths.len() as f64).sqrt() / truth_range)
}

/// Euclidean norm of the per-output errors.
pub fn nrmse_sum(per_output: &[f64]) -> f64 {
    per_output.iter().map(|e| e * e).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n_meas: usize,
    /// `None` for the initial-design record.
    pub leader: Option<Leader>,
    pub query: Option<Vec<f64>>,
    pub nrmse: Vec<f64>,
    pub nrmse_sum: f64,
    pub cv: Option<Vec<CvScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: StrategyKind,
    pub run_index: usize,
    pub run_seed: u64,
    pub records: Vec<Record>,
}

impl LearningCurve {
    pub fn final_value(&self) -> Option<f64> {
        self.records.last().map(|r| r.nrmse_sum)
    }

    pub fn n_meas(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.n_meas).collect()
    }
}

/// Pointwise mean and sample standard deviation over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub strategy: StrategyKind,
    pub n_runs: usize,
    pub n_meas: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AggregateCurve {
    pub fn final_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }

    pub fn mean_at(&self, n_meas: usize) -> Option<f64> {
        self.n_meas.iter().position(|n| *n == n_meas).map(|i| self.mean[i])
    }
}

pub fn aggregate_runs(curves: &[LearningCurve]) -> Result<AggregateCurve> {
    let first = curves
        .first()
        .ok_or_else(|| AosError::Aggregation("no curves to aggregate".into()))?;
    let grid = first.n_meas();
    for c in curves {
        if c.strategy != first.strategy {
            return Err(AosError::Aggregation(format!(
                "mixed strategies {} and {}",
                first.strategy, c.strategy
            )));
        }
        if c.n_meas() != grid {
            return Err(AosError::Aggregation(format!(
                "run {} has a different measurement grid",
                c.run_index
            )));
        }
    }
    let n = curves.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut std = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        // Shift by the first run so identical curves aggregate exactly.
        let shift = first.records[i].nrmse_sum;
        let dev: Vec<f64> = curves.iter().map(|c| c.records[i].nrmse_sum - shift).collect();
        let mean_dev = dev.iter().sum::<f64>() / n;
        let s = if curves.len() > 1 {
            (dev.iter().map(|d| (d - mean_dev).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        mean.push(shift + mean_dev);
        std.push(s);
    }
    Ok(AggregateCurve {
        strategy: first.strategy,
        n_runs: curves.len(),
        n_meas: grid,
        mean,
        std,
    })
}

/// First measurement count at which the mean curve is at or below
/// `reference`; `None` if it never gets there.
pub fn measurements_to_reach(curve: &AggregateCurve, reference: f64) -> Option<usize> {
    curve
        .n_meas
        .iter()
        .zip(&curve.mean)
        .find(|(_, m)| **m <= reference)
        .map(|(n, _)| *n)
}
