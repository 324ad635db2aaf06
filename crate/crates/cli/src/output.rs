//! CSV files written by the harness.

use std::collections::HashMap;
use std::path::Path;

use tbal_core::metrics::Summary;
use tbal_core::{PointState, Pool, RunResult, ValidationSet};

use crate::sweep::{RunRow, SummaryRow};
use crate::CliError;

pub const RUNS_HEADER: [&str; 8] = [
    "method",
    "axis_value",
    "seed",
    "err_hat",
    "cov_hat",
    "human_labels",
    "val_labels",
    "rounds",
];

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_runs(path: &Path, rows: &[RunRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = |e| CliError::csv(path, e);
    w.write_record(RUNS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.axis_value.to_string(),
            r.seed.to_string(),
            opt(r.err_hat),
            r.cov_hat.to_string(),
            r.human_labels.to_string(),
            r.val_labels.to_string(),
            r.rounds.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn summary_header() -> Vec<String> {
    let mut h = vec!["method".to_string(), "axis_value".into(), "trials".into(), "err_runs".into()];
    for m in &RUNS_HEADER[3..] {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = |e| CliError::csv(path, e);
    w.write_record(summary_header()).map_err(err)?;
    let pair = |s: &Summary| [s.mean.to_string(), s.std.to_string()];
    for r in rows {
        let mut rec = vec![
            r.method.name().to_string(),
            r.axis_value.to_string(),
            r.trials.to_string(),
            r.err_runs.to_string(),
            opt(r.err_hat.map(|s| s.mean)),
            opt(r.err_hat.map(|s| s.std)),
        ];
        for s in [&r.cov_hat, &r.human_labels, &r.val_labels, &r.rounds] {
            rec.extend(pair(s));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `D_out`: one row per pool point with its label and where it came from.
pub fn export_dataset(result: &RunResult, path: &Path, features: bool) -> Result<(), CliError> {
    let queried_in: HashMap<usize, usize> = result
        .rounds
        .iter()
        .flat_map(|r| r.queried.iter().map(move |&id| (id, r.round)))
        .collect();
    let pool = &result.pool;
    let mut w = writer(path)?;
    let err = |e| CliError::csv(path, e);
    let mut header: Vec<String> = ["id", "label", "provenance", "round"].map(String::from).to_vec();
    if features {
        header.extend((0..pool.dim()).map(|j| format!("x{j}")));
    }
    w.write_record(&header).map_err(err)?;
    for (id, st) in pool.states().iter().enumerate() {
        let (label, provenance, round) = match *st {
            PointState::Unlabeled => (String::new(), "unlabeled", String::new()),
            PointState::HumanLabeled(y) => (
                y.to_string(),
                "human",
                queried_in.get(&id).map(|r| r.to_string()).unwrap_or_default(),
            ),
            PointState::AutoLabeled { label, round } => (label.to_string(), "auto", round.to_string()),
        };
        let mut rec = vec![id.to_string(), label, provenance.to_string(), round];
        if features {
            rec.extend(pool.features(id).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_points<'a>(
    path: &Path,
    dim: usize,
    points: impl Iterator<Item = (&'a [f64], usize)>,
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = |e| CliError::csv(path, e);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(err)?;
    for (id, (x, y)) in points.enumerate() {
        let mut rec = vec![id.to_string(), y.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `pool.csv` and `validation.csv` with ground-truth labels.
pub fn write_split(dir: &Path, pool: &Pool, val: &ValidationSet) -> Result<(), CliError> {
    let truth = pool.oracle();
    write_points(
        &dir.join("pool.csv"),
        pool.dim(),
        (0..pool.len()).map(|i| (pool.features(i), truth.label(i))),
    )?;
    write_points(
        &dir.join("validation.csv"),
        val.dim(),
        (0..val.len()).map(|i| (val.features(i), val.label(i))),
    )
}
