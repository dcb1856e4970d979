//! Raw per-trial rows and their per-point aggregates.

use serde::{Deserialize, Serialize};

use crate::config::{EstimatorKind, SweepVar};

/// One estimator on one trial at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub trial: usize,
    /// Missing when the estimator returned no estimate.
    pub nmse: Option<f64>,
    pub converged: bool,
    /// Set on errors and on reported divergence.
    pub failed: bool,
}

impl RawRow {
    pub fn failed(estimator: EstimatorKind, value: f64, trial: usize) -> Self {
        RawRow {
            estimator,
            value,
            trial,
            nmse: None,
            converged: false,
            failed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub trial: usize,
    pub wall_time_s: f64,
}

/// Statistics of the linear NMSE over the trials that produced one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_nmse: Option<f64>,
    /// `10 log10(mean_nmse)`; missing when the mean is zero or absent.
    pub mean_nmse_db: Option<f64>,
    /// Sample standard deviation.
    pub std_nmse: Option<f64>,
    /// Standard error of the mean.
    pub stderr_nmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub sweep: SweepVar,
    pub rows: Vec<RawRow>,
    pub timings: Vec<TimingRow>,
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl ResultTable {
    pub fn new(sweep: SweepVar) -> Self {
        ResultTable {
            sweep,
            rows: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Group rows by (value, estimator) in order of first appearance.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(f64, EstimatorKind)> = Vec::new();
        let mut groups: Vec<Vec<&RawRow>> = Vec::new();
        for r in &self.rows {
            let k = (r.value, r.estimator);
            match keys.iter().position(|&x| x == k) {
                Some(i) => groups[i].push(r),
                None => {
                    keys.push(k);
                    groups.push(vec![r]);
                }
            }
        }
        keys.into_iter()
            .zip(groups)
            .map(|((value, estimator), rows)| aggregate(estimator, value, &rows))
            .collect()
    }

    /// Aggregate for one point, if present.
    pub fn point(&self, estimator: EstimatorKind, value: f64) -> Option<AggregateRow> {
        let rows: Vec<&RawRow> = self
            .rows
            .iter()
            .filter(|r| r.estimator == estimator && r.value == value)
            .collect();
        (!rows.is_empty()).then(|| aggregate(estimator, value, &rows))
    }

    /// NMSE samples for one point, indexed by trial; failed trials are `None`.
    pub fn samples(&self, estimator: EstimatorKind, value: f64) -> Vec<(usize, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator && r.value == value)
            .map(|r| (r.trial, r.nmse))
            .collect()
    }
}

fn aggregate(estimator: EstimatorKind, value: f64, rows: &[&RawRow]) -> AggregateRow {
    let xs: Vec<f64> = rows.iter().filter_map(|r| r.nmse).collect();
    let n = xs.len();
    let mean = (n > 0).then(|| xs.iter().sum::<f64>() / n as f64);
    let std = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    });
    AggregateRow {
        estimator,
        value,
        trials: rows.len(),
        failures: rows.iter().filter(|r| r.failed).count(),
        mean_nmse: mean,
        mean_nmse_db: mean.filter(|&m| m > 0.0).map(to_db),
        std_nmse: std,
        stderr_nmse: std.map(|s| s / (n as f64).sqrt()),
    }
}
