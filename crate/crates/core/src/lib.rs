//! Threshold-based auto-labeling.
//!
//! The crate is organised bottom-up:
//!
//! * [`pool`] holds the labeled/unlabeled point lifecycle, the oracle and the RNG contract.
//! * [`data`] generates the synthetic datasets and reads MNIST IDX files.
//! * [`model`] trains linear classifiers by SGD.
//! * [`confidence`] turns a model and a point into a (class, score) pair.
//! * [`threshold`] picks per-class auto-labeling thresholds from validation data.
//! * [`query`] selects the next batch of points for human labeling.
//! * [`engine`] runs the auto-labeling loop and the four baselines.
//! * [`metrics`] scores a finished run against the ground truth.
//! * [`theory`] evaluates the sample-complexity bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod confidence;
pub mod data;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod query;
pub mod theory;
pub mod threshold;

pub use confidence::{ConfidenceKind, Scored};
pub use data::{Dataset, DatasetKind, DatasetSpec};
pub use engine::{run, Method, RoundRecord, RunConfig, RunResult};
pub use metrics::{evaluate, MetricReport};
pub use model::{LinearModel, Loss, Schedule, TrainConfig};
pub use pool::{PartitionCounts, PointState, Pool, RngSeed, TbalRng, ValidationSet};
pub use threshold::{SigmaKind, ThresholdConfig, ThresholdDecision};
