//! Auto-labeling error and coverage, counted against the ground truth.

use thiserror::Error;

use crate::engine::RunResult;
use crate::pool::{PointState, Pool};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("result was produced from a different pool (fingerprint {result:#x}, pool {pool:#x})")]
    PoolMismatch { result: u64, pool: u64 },
    #[error("no reports to summarize")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Points auto-labeled this round, `n_a`.
    pub n_auto: usize,
    /// Wrong auto-labels this round, `m_a`.
    pub mistakes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// `mistakes / n_auto`; `None` when nothing was auto-labeled.
    pub err_hat: Option<f64>,
    /// `n_auto / n_pool`.
    pub cov_hat: f64,
    pub n_auto: usize,
    pub mistakes: usize,
    pub n_pool: usize,
    pub per_round: Vec<RoundMetrics>,
    /// Validation error inside the auto-labeled region, per round.
    pub val_error: Vec<Option<f64>>,
    pub human_labels_used: usize,
    pub val_labels_used: usize,
}

/// Score a finished run. `pool` supplies the ground truth and must hold the
/// same points the run was given.
pub fn evaluate(result: &RunResult, pool: &Pool) -> Result<MetricReport, MetricsError> {
    if result.pool.fingerprint() != pool.fingerprint() || result.pool.len() != pool.len() {
        return Err(MetricsError::PoolMismatch {
            result: result.pool.fingerprint(),
            pool: pool.fingerprint(),
        });
    }
    let truth = pool.oracle();
    let mut per_round: Vec<RoundMetrics> = result
        .rounds
        .iter()
        .map(|r| RoundMetrics {
            round: r.round,
            n_auto: 0,
            mistakes: 0,
        })
        .collect();
    let mut n_auto = 0;
    let mut mistakes = 0;
    for (id, state) in result.pool.states().iter().enumerate() {
        if let PointState::AutoLabeled { label, round } = *state {
            let wrong = usize::from(label != truth.label(id));
            n_auto += 1;
            mistakes += wrong;
            if let Some(r) = per_round.iter_mut().find(|r| r.round == round) {
                r.n_auto += 1;
                r.mistakes += wrong;
            }
        }
    }
    Ok(MetricReport {
        err_hat: (n_auto > 0).then(|| mistakes as f64 / n_auto as f64),
        cov_hat: n_auto as f64 / pool.len() as f64,
        n_auto,
        mistakes,
        n_pool: pool.len(),
        per_round,
        val_error: result.rounds.iter().map(|r| r.val_error).collect(),
        human_labels_used: result.pool.partition_counts().human,
        val_labels_used: result.val_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for one value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        std,
        n: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    /// Over the runs whose error is defined; `None` if there are none.
    pub err_hat: Option<Summary>,
    pub cov_hat: Summary,
    pub human_labels: Summary,
}

pub fn summarize_trials(reports: &[MetricReport]) -> Result<TrialSummary, MetricsError> {
    let errs: Vec<f64> = reports.iter().filter_map(|r| r.err_hat).collect();
    let covs: Vec<f64> = reports.iter().map(|r| r.cov_hat).collect();
    let humans: Vec<f64> = reports.iter().map(|r| r.human_labels_used as f64).collect();
    Ok(TrialSummary {
        err_hat: mean_std(&errs),
        cov_hat: mean_std(&covs).ok_or(MetricsError::Empty)?,
        human_labels: mean_std(&humans).ok_or(MetricsError::Empty)?,
    })
}
