//! Sweep execution: one engine run per (method, grid value, trial).

use std::sync::Arc;

use rayon::prelude::*;
use tbal_core::data::split_pool_val;
use tbal_core::engine::{self, Method};
use tbal_core::metrics::{self, mean_std, Summary};
use tbal_core::pool::streams;
use tbal_core::{Dataset, DatasetKind, Pool, RngSeed, RunResult, ValidationSet};

use crate::config::{Axis, ExperimentConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub method: Method,
    pub axis_value: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub method: Method,
    pub axis_value: usize,
    pub seed: u64,
    pub err_hat: Option<f64>,
    pub cov_hat: f64,
    pub human_labels: usize,
    pub val_labels: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub axis_value: usize,
    pub trials: usize,
    /// Trials whose error is defined.
    pub err_runs: usize,
    pub err_hat: Option<Summary>,
    pub cov_hat: Summary,
    pub human_labels: Summary,
    pub val_labels: Summary,
    pub rounds: Summary,
}

#[derive(Debug)]
pub struct JobFailure {
    pub job: Job,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct SweepOutput {
    /// Sorted by method, grid value, seed.
    pub rows: Vec<RunRow>,
    pub failures: Vec<JobFailure>,
}

/// Where each trial's data comes from.
pub enum Source {
    /// Regenerated from the trial seed.
    Synthetic,
    /// Read once and re-split per trial.
    Loaded(Arc<Dataset>),
}

impl Source {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Source, CliError> {
        match cfg.dataset.kind {
            DatasetKind::Mnist => {
                let data = cfg.dataset.build(&mut RngSeed(cfg.seed_base).stream(streams::DATA))?;
                Ok(Source::Loaded(Arc::new(data)))
            }
            _ => Ok(Source::Synthetic),
        }
    }

    /// Pool and full validation set of trial `seed`.
    pub fn split(&self, cfg: &ExperimentConfig, seed: u64) -> Result<(Pool, ValidationSet), CliError> {
        let s = RngSeed(seed);
        let spec = &cfg.dataset;
        let generated;
        let data = match self {
            Source::Loaded(d) => d.as_ref(),
            Source::Synthetic => {
                generated = spec.build(&mut s.stream(streams::DATA))?;
                &generated
            }
        };
        Ok(split_pool_val(data, spec.pool_size, spec.val_size, &mut s.stream(streams::SPLIT))?)
    }
}

pub fn plan(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for &axis_value in &cfg.sweep.values {
            for j in 0..cfg.trials as u64 {
                jobs.push(Job {
                    method,
                    axis_value,
                    seed: cfg.seed_base + j,
                });
            }
        }
    }
    jobs
}

/// One engine run, returning the result with the pool it was scored against.
pub fn run_job(cfg: &ExperimentConfig, source: &Source, job: Job) -> Result<(RunResult, Pool), CliError> {
    let (pool, val) = source.split(cfg, job.seed)?;
    let val = match cfg.sweep.axis {
        Axis::ValidationSize => val.truncated(job.axis_value),
        Axis::TrainBudget => val,
    };
    let rc = cfg.run_config(job.method, job.axis_value);
    let result = engine::run(&pool, &val, &rc, &mut RngSeed(job.seed).stream(streams::RUN))?;
    Ok((result, pool))
}

fn row_for(cfg: &ExperimentConfig, source: &Source, job: Job) -> Result<RunRow, CliError> {
    let (result, pool) = run_job(cfg, source, job)?;
    let report = metrics::evaluate(&result, &pool)?;
    Ok(RunRow {
        method: job.method,
        axis_value: job.axis_value,
        seed: job.seed,
        err_hat: report.err_hat,
        cov_hat: report.cov_hat,
        human_labels: report.human_labels_used,
        val_labels: report.val_labels_used,
        rounds: result.rounds.len(),
    })
}

pub fn execute(cfg: &ExperimentConfig, source: &Source) -> Result<SweepOutput, CliError> {
    let jobs = plan(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Run(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let results: Vec<(Job, Result<RunRow, CliError>)> =
        pool.install(|| jobs.par_iter().map(|&job| (job, row_for(cfg, source, job))).collect());
    let mut out = SweepOutput::default();
    for (job, r) in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(e) => out.failures.push(JobFailure {
                job,
                error: e.to_string(),
            }),
        }
    }
    out.rows.sort_by_key(|r| (r.method.name(), r.axis_value, r.seed));
    Ok(out)
}

pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for group in rows.chunk_by(|a, b| a.method == b.method && a.axis_value == b.axis_value) {
        let col = |f: &dyn Fn(&RunRow) -> f64| -> Summary {
            let v: Vec<f64> = group.iter().map(f).collect();
            // chunks are never empty
            mean_std(&v).unwrap_or(Summary { mean: 0.0, std: 0.0, n: 0 })
        };
        let errs: Vec<f64> = group.iter().filter_map(|r| r.err_hat).collect();
        out.push(SummaryRow {
            method: group[0].method,
            axis_value: group[0].axis_value,
            trials: group.len(),
            err_runs: errs.len(),
            err_hat: mean_std(&errs),
            cov_hat: col(&|r| r.cov_hat),
            human_labels: col(&|r| r.human_labels as f64),
            val_labels: col(&|r| r.val_labels as f64),
            rounds: col(&|r| r.rounds as f64),
        });
    }
    out
}
