//! Point lifecycle, the labeling oracle and the RNG contract.
//!
//! A [`Pool`] owns the unlabeled points an auto-labeling run works on. Ground
//! truth never leaves the pool except through an [`Oracle`], which stands in
//! for the human annotator. Each point moves at most once, from
//! [`PointState::Unlabeled`] to either a human or a machine label.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

/// The one generator used for every stochastic step.
pub type TbalRng = ChaCha8Rng;

/// Stream ids used to split a seed into independent generators.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const RUN: u64 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> TbalRng {
        self.stream(0)
    }

    /// A generator for the given stream. Distinct streams under one seed do not overlap.
    pub fn stream(self, stream: u64) -> TbalRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    pub fn offset(self, j: u64) -> RngSeed {
        RngSeed(self.0.wrapping_add(j))
    }
}

impl fmt::Display for RngSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointState {
    Unlabeled,
    HumanLabeled(usize),
    AutoLabeled { label: usize, round: usize },
}

impl PointState {
    pub fn label(&self) -> Option<usize> {
        match *self {
            PointState::Unlabeled => None,
            PointState::HumanLabeled(l) => Some(l),
            PointState::AutoLabeled { label, .. } => Some(label),
        }
    }

    pub fn is_unlabeled(&self) -> bool {
        matches!(self, PointState::Unlabeled)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("point {id} is out of range for a pool of {len}")]
    OutOfRange { id: usize, len: usize },
    #[error("point {id} is already {state:?}; labels are never reassigned")]
    AlreadyLabeled { id: usize, state: PointState },
    #[error("label {label} is outside 0..{num_classes}")]
    BadLabel { label: usize, num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PartitionCounts {
    pub auto: usize,
    pub human: usize,
    pub unlabeled: usize,
}

impl PartitionCounts {
    pub fn total(&self) -> usize {
        self.auto + self.human + self.unlabeled
    }
}

/// The unlabeled pool together with each point's labeling state.
///
/// Cloning is cheap: the feature matrix and labels are shared, only the state
/// vector is copied.
#[derive(Debug, Clone)]
pub struct Pool {
    data: Arc<Dataset>,
    states: Vec<PointState>,
    fingerprint: u64,
}

impl Pool {
    pub fn new(data: Dataset) -> Self {
        let fingerprint = data.fingerprint();
        let states = vec![PointState::Unlabeled; data.len()];
        Pool {
            data: Arc::new(data),
            states,
            fingerprint,
        }
    }

    /// The same points with every state reset to unlabeled.
    pub fn fresh(&self) -> Pool {
        Pool {
            data: Arc::clone(&self.data),
            states: vec![PointState::Unlabeled; self.data.len()],
            fingerprint: self.fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn features(&self, id: usize) -> &[f64] {
        self.data.row(id)
    }

    pub fn state(&self, id: usize) -> PointState {
        self.states[id]
    }

    pub fn states(&self) -> &[PointState] {
        &self.states
    }

    /// Identifies the underlying points; two pools over the same data share it.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_unlabeled())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn partition_counts(&self) -> PartitionCounts {
        let mut counts = PartitionCounts::default();
        for s in &self.states {
            match s {
                PointState::Unlabeled => counts.unlabeled += 1,
                PointState::HumanLabeled(_) => counts.human += 1,
                PointState::AutoLabeled { .. } => counts.auto += 1,
            }
        }
        counts
    }

    pub fn oracle(&self) -> Oracle<'_> {
        Oracle { data: &self.data }
    }

    /// Ask the oracle for the label of `id` and record it as human-provided.
    pub fn query_human(&mut self, id: usize) -> Result<usize, StateError> {
        self.check_unlabeled(id)?;
        let label = self.data.label(id);
        self.states[id] = PointState::HumanLabeled(label);
        Ok(label)
    }

    pub fn auto_label(&mut self, id: usize, label: usize, round: usize) -> Result<(), StateError> {
        self.check_unlabeled(id)?;
        if label >= self.num_classes() {
            return Err(StateError::BadLabel {
                label,
                num_classes: self.num_classes(),
            });
        }
        self.states[id] = PointState::AutoLabeled { label, round };
        Ok(())
    }

    fn check_unlabeled(&self, id: usize) -> Result<(), StateError> {
        match self.states.get(id) {
            None => Err(StateError::OutOfRange {
                id,
                len: self.len(),
            }),
            Some(PointState::Unlabeled) => Ok(()),
            Some(&state) => Err(StateError::AlreadyLabeled { id, state }),
        }
    }
}

/// Noiseless labeler: returns the ground-truth class of a pool point.
#[derive(Clone, Copy)]
pub struct Oracle<'a> {
    data: &'a Dataset,
}

impl Oracle<'_> {
    pub fn label(&self, id: usize) -> usize {
        self.data.label(id)
    }
}

/// Human-labeled validation points with an activity mask.
///
/// Points are deactivated once they fall inside an auto-labeled region. A
/// deactivated point never becomes active again.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    data: Arc<Dataset>,
    active: Vec<bool>,
}

impl ValidationSet {
    pub fn new(data: Dataset) -> Self {
        let active = vec![true; data.len()];
        ValidationSet {
            data: Arc::new(data),
            active,
        }
    }

    /// The first `n` entries (all of them if `n` exceeds the size), all active.
    pub fn truncated(&self, n: usize) -> ValidationSet {
        let n = n.min(self.data.len());
        let idx: Vec<usize> = (0..n).collect();
        ValidationSet::new(self.data.subset(&idx))
    }

    /// Same entries with every mask bit set.
    pub fn fresh(&self) -> ValidationSet {
        ValidationSet {
            data: Arc::clone(&self.data),
            active: vec![true; self.data.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.data.label(i)
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    /// Returns whether the entry was active before the call.
    pub fn deactivate(&mut self, i: usize) -> bool {
        std::mem::replace(&mut self.active[i], false)
    }
}
