//! Choosing which pool points go to the human labeler.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::TbalRng;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("invalid query configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    Random,
    /// Sample uniformly from the `ceil(c · n_b)` least confident points.
    MarginRandom { c: f64 },
}

impl Default for QueryStrategy {
    fn default() -> Self {
        QueryStrategy::MarginRandom { c: 2.0 }
    }
}

impl QueryStrategy {
    pub fn validate(&self) -> Result<(), QueryError> {
        match *self {
            QueryStrategy::MarginRandom { c } if !(c > 1.0 && c.is_finite()) => Err(
                QueryError::Config(format!("margin_random needs c > 1, got {c}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Which uncertainty the margin-random strategy sorts by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginScore {
    /// The confidence score used for auto-labeling.
    #[default]
    Confidence,
    /// Gap between the two largest class scores.
    TopTwoGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryBatch {
    pub ids: Vec<usize>,
    /// Fewer ids were available than requested.
    pub truncated: bool,
}

/// `n` distinct ids drawn uniformly without replacement.
pub fn query_random(ids: &[usize], n: usize, rng: &mut TbalRng) -> QueryBatch {
    if n >= ids.len() {
        let mut all = ids.to_vec();
        all.shuffle(rng);
        return QueryBatch {
            ids: all,
            truncated: n > ids.len(),
        };
    }
    QueryBatch {
        ids: ids.choose_multiple(rng, n).copied().collect(),
        truncated: false,
    }
}

/// Draw `n_b` ids uniformly from the `ceil(c · n_b)` lowest-scoring
/// candidates; ties are ordered by id.
pub fn query_margin_random(scored: &[(usize, f64)], n_b: usize, c: f64, rng: &mut TbalRng) -> QueryBatch {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let slice = ((c * n_b as f64).ceil() as usize).min(sorted.len());
    let ids: Vec<usize> = sorted[..slice].iter().map(|p| p.0).collect();
    query_random(&ids, n_b, rng).with_truncation(n_b > scored.len())
}

impl QueryBatch {
    fn with_truncation(mut self, truncated: bool) -> Self {
        self.truncated = truncated;
        self
    }
}
