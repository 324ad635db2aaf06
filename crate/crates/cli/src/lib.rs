//! Experiment harness for `tbal-core`: configuration files, seeded sweeps
//! and CSV output.
//!
//! A sweep writes two files to its output directory:
//!
//! * `runs.csv` with columns `method,axis_value,seed,err_hat,cov_hat,human_labels,val_labels,rounds`,
//!   one row per engine run, sorted by method, grid value and seed.
//!   `err_hat` is empty when a run auto-labeled nothing.
//! * `summary.csv` with `method,axis_value,trials,err_runs` followed by a
//!   `_mean` and `_std` column for every metric of `runs.csv`. The error
//!   columns average over the `err_runs` trials whose error is defined.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod output;
pub mod sweep;

pub use config::ExperimentConfig;
pub use sweep::{RunRow, Source, SummaryRow, SweepOutput};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] tbal_core::data::DataError),
    #[error(transparent)]
    Engine(#[from] tbal_core::engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] tbal_core::metrics::MetricsError),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn csv(path: &Path, e: csv::Error) -> Self {
        CliError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

/// Run every job of the sweep and write `runs.csv` and `summary.csv` under
/// `cfg.out`. Rows of failed jobs are left out; the failures are returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepOutput, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io {
        path: cfg.out.clone(),
        source,
    })?;
    let source = Source::prepare(cfg)?;
    let out = sweep::execute(cfg, &source)?;
    output::write_runs(&cfg.out.join("runs.csv"), &out.rows)?;
    output::write_summary(&cfg.out.join("summary.csv"), &sweep::summarize(&out.rows))?;
    Ok(out)
}
