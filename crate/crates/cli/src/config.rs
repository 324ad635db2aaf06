//! Experiment configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tbal_core::confidence::ConfidenceChoice;
use tbal_core::engine::{Method, RunConfig};
use tbal_core::model::{Loss, Schedule};
use tbal_core::query::{MarginScore, QueryStrategy};
use tbal_core::{DatasetKind, DatasetSpec, ThresholdConfig, TrainConfig};

use crate::CliError;

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_VAR: &str = "TBAL_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Vary `N_q`, the human-label budget.
    TrainBudget,
    /// Vary `N_v`; the validation set is cut to its first `N_v` points.
    ValidationSize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<usize>,
    /// Fixed `N_q` when sweeping the validation size.
    #[serde(default)]
    pub max_train: Option<usize>,
}

/// Trainer fields that replace the dataset's defaults when present.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub loss: Option<Loss>,
    pub schedule: Option<Schedule>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub batch_size: Option<usize>,
    pub tolerance: Option<f64>,
    pub fit_bias: Option<bool>,
    pub normalized: Option<bool>,
}

impl TrainOverrides {
    fn apply(&self, t: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { t.$f = v; })*};
        }
        set!(loss, schedule, epochs, learning_rate, l2, batch_size, tolerance, fit_bias, normalized);
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunTemplate {
    /// `n_s` as a fraction of `N_q`.
    pub seed_fraction: f64,
    /// `n_b` as a fraction of `N_q`.
    pub batch_fraction: f64,
    pub threshold: ThresholdConfig,
    pub query: QueryStrategy,
    pub margin_score: MarginScore,
    pub confidence: Option<ConfidenceChoice>,
    pub train: TrainOverrides,
}

impl Default for RunTemplate {
    fn default() -> Self {
        RunTemplate {
            seed_fraction: 0.2,
            batch_fraction: 0.05,
            threshold: ThresholdConfig::default(),
            query: QueryStrategy::default(),
            margin_score: MarginScore::default(),
            confidence: None,
            train: TrainOverrides::default(),
        }
    }
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    pub sweep: SweepConfig,
    #[serde(default = "one")]
    pub trials: usize,
    /// Trial `j` runs with seed `seed_base + j`.
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub run: RunTemplate,
}

pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_data_paths();
        cfg.validate().map_err(|message| CliError::Config {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// MNIST files default to `$TBAL_DATA_DIR/mnist/train-*-ubyte`.
    fn resolve_data_paths(&mut self) {
        if self.dataset.kind != DatasetKind::Mnist {
            return;
        }
        let dir = data_dir().join("mnist");
        if self.dataset.images.is_none() {
            self.dataset.images = Some(dir.join("train-images-idx3-ubyte"));
        }
        if self.dataset.labels.is_none() {
            self.dataset.labels = Some(dir.join("train-labels-idx1-ubyte"));
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.dataset.validate().map_err(|e| format!("dataset: {e}"))?;
        if self.methods.is_empty() {
            return Err("methods: list is empty".into());
        }
        if self.trials == 0 {
            return Err("trials: must be >= 1".into());
        }
        if self.workers == 0 {
            return Err("workers: must be >= 1".into());
        }
        if self.sweep.values.is_empty() {
            return Err("sweep.values: grid is empty".into());
        }
        for (name, f) in [
            ("run.seed_fraction", self.run.seed_fraction),
            ("run.batch_fraction", self.run.batch_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(format!("{name}: must lie in (0, 1], got {f}"));
            }
        }
        match self.sweep.axis {
            Axis::TrainBudget => {
                if self.sweep.max_train.is_some() {
                    return Err("sweep.max_train: only used with axis = \"validation_size\"".into());
                }
                if let Some(&v) = self.sweep.values.iter().find(|&&v| v == 0 || v > self.dataset.pool_size) {
                    return Err(format!(
                        "sweep.values: budget {v} must lie in 1..={}",
                        self.dataset.pool_size
                    ));
                }
            }
            Axis::ValidationSize => {
                let Some(nq) = self.sweep.max_train else {
                    return Err("sweep.max_train: required with axis = \"validation_size\"".into());
                };
                if nq == 0 || nq > self.dataset.pool_size {
                    return Err(format!("sweep.max_train: {nq} must lie in 1..={}", self.dataset.pool_size));
                }
                if let Some(&v) = self.sweep.values.iter().find(|&&v| v > self.dataset.val_size) {
                    return Err(format!(
                        "sweep.values: validation size {v} exceeds dataset.val_size = {}",
                        self.dataset.val_size
                    ));
                }
            }
        }
        for &m in &self.methods {
            for &v in &self.sweep.values {
                self.run_config(m, v)
                    .validate()
                    .map_err(|e| format!("run ({m}, axis value {v}): {e}"))?;
            }
        }
        Ok(())
    }

    /// `N_q` for one grid value.
    pub fn budget(&self, axis_value: usize) -> usize {
        match self.sweep.axis {
            Axis::TrainBudget => axis_value,
            Axis::ValidationSize => self.sweep.max_train.unwrap_or(axis_value),
        }
    }

    pub fn run_config(&self, method: Method, axis_value: usize) -> RunConfig {
        let max_train = self.budget(axis_value);
        let t = &self.run;
        let mut cfg = RunConfig::for_dataset(method, self.dataset.kind, max_train);
        let frac = |f: f64| ((max_train as f64 * f).round() as usize).max(1);
        cfg.seed_size = frac(t.seed_fraction).min(max_train);
        cfg.batch_size = frac(t.batch_fraction);
        cfg.threshold = t.threshold;
        cfg.query = t.query;
        cfg.margin_score = t.margin_score;
        if let Some(c) = t.confidence {
            cfg.confidence = c;
        }
        t.train.apply(&mut cfg.train);
        cfg
    }
}
