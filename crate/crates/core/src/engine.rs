//! The auto-labeling loop and its baselines.
//!
//! All five methods share one driver. TBAL trains, thresholds and labels in
//! every round, then queries a margin-random batch. AL follows the same query
//! schedule but labels nothing until the budget is spent, then labels every
//! remaining point with the final model. PL spends the whole budget on one
//! random draw. The `+SC` variants replace the final "label everything" step
//! with one threshold pass.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{self, ConfidenceChoice, ConfidenceError, ConfidenceKind, Scored};
use crate::data::{Dataset, DatasetKind};
use crate::model::{self, FitReport, LinearModel, Loss, ModelError, Schedule, TrainConfig};
use crate::pool::{PartitionCounts, PointState, Pool, StateError, TbalRng, ValidationSet};
use crate::query::{self, MarginScore, QueryError, QueryStrategy};
use crate::threshold::{self, ThresholdConfig, ThresholdDecision, ThresholdError, ValScore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invariant violated in round {round}: {message}")]
    Invariant { round: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tbal,
    Pl,
    Al,
    PlSc,
    AlSc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Tbal, Method::Pl, Method::Al, Method::PlSc, Method::AlSc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tbal => "tbal",
            Method::Pl => "pl",
            Method::Al => "al",
            Method::PlSc => "pl_sc",
            Method::AlSc => "al_sc",
        }
    }

    fn is_active(self) -> bool {
        matches!(self, Method::Tbal | Method::Al | Method::AlSc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EngineError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    /// Size of the initial random batch, `n_s`.
    pub seed_size: usize,
    /// Active query batch size, `n_b`.
    pub batch_size: usize,
    /// Total human labels available for training, `N_q`.
    pub max_train: usize,
    pub threshold: ThresholdConfig,
    pub query: QueryStrategy,
    pub margin_score: MarginScore,
    pub train: TrainConfig,
    pub confidence: ConfidenceChoice,
}

impl RunConfig {
    /// `n_s = 20%` and `n_b = 5%` of the budget, margin-random with `C = 2`.
    pub fn for_budget(method: Method, max_train: usize) -> Self {
        let pct = |p: f64| ((max_train as f64 * p).round() as usize).max(1);
        RunConfig {
            method,
            seed_size: pct(0.2).min(max_train),
            batch_size: pct(0.05),
            max_train,
            threshold: ThresholdConfig::default(),
            query: QueryStrategy::default(),
            margin_score: MarginScore::Confidence,
            train: TrainConfig::default(),
            confidence: ConfidenceChoice::AbsMargin,
        }
    }

    /// Budget defaults plus the model and confidence conventions of a dataset.
    pub fn for_dataset(method: Method, kind: DatasetKind, max_train: usize) -> Self {
        let mut cfg = Self::for_budget(method, max_train);
        match kind {
            DatasetKind::UnitBall => {
                cfg.train.fit_bias = false;
                cfg.train.schedule = Schedule::Pegasos;
            }
            DatasetKind::Xor => {}
            DatasetKind::Mnist => {
                cfg.train.loss = Loss::Logistic;
                cfg.confidence = ConfidenceChoice::Softmax;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.seed_size == 0 {
            return Err(EngineError::Config("seed_size must be >= 1".into()));
        }
        if self.seed_size > self.max_train {
            return Err(EngineError::Config(format!(
                "seed_size {} exceeds max_train {}",
                self.seed_size, self.max_train
            )));
        }
        if self.batch_size == 0 {
            return Err(EngineError::Config("batch_size must be >= 1".into()));
        }
        if let ConfidenceChoice::Energy { temperature } = self.confidence {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(EngineError::Config(format!(
                    "energy temperature must be positive, got {temperature}"
                )));
            }
        }
        if self.confidence == ConfidenceChoice::AbsMargin && self.train.loss != Loss::Hinge {
            return Err(EngineError::Config(
                "abs_margin confidence needs a binary hinge model".into(),
            ));
        }
        self.threshold.validate()?;
        self.query.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Human-labeled ids that joined the training set at the start of this round.
    pub queried: Vec<usize>,
    pub train_size: usize,
    /// The hypothesis fitted this round.
    pub model: LinearModel,
    pub train_loss: f64,
    pub train_error: f64,
    pub single_class: Option<usize>,
    /// `None` in rounds that do not threshold.
    pub decision: Option<ThresholdDecision>,
    /// Subtracted from every raw score this round (energy scores only).
    pub score_shift: f64,
    pub auto_labeled: Vec<(usize, usize)>,
    pub val_deactivated: Vec<usize>,
    pub n_unlabeled_before: usize,
    /// Active validation points when the round started.
    pub n_val_active: usize,
    /// Validation error inside the auto-labeled region.
    pub val_error: Option<f64>,
    /// Fraction of active validation points inside the auto-labeled region.
    pub val_coverage: Option<f64>,
}

impl RoundRecord {
    pub fn n_auto(&self) -> usize {
        self.auto_labeled.len()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub pool: Pool,
    pub validation: ValidationSet,
    pub rounds: Vec<RoundRecord>,
    pub final_model: LinearModel,
    pub n_auto: usize,
    pub n_human: usize,
    pub val_size: usize,
    pub budget: usize,
}

impl RunResult {
    pub fn counts(&self) -> PartitionCounts {
        self.pool.partition_counts()
    }

    /// Every human-labeled id, in query order.
    pub fn queried_ids(&self) -> Vec<usize> {
        self.rounds.iter().flat_map(|r| r.queried.iter().copied()).collect()
    }

    pub fn thresholds(&self) -> Vec<Option<Vec<f64>>> {
        self.rounds
            .iter()
            .map(|r| {
                r.decision
                    .as_ref()
                    .map(|d| d.classes.iter().map(|c| c.threshold).collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Labeling {
    Nothing,
    Threshold,
    Everything,
}

struct Scoring {
    kind: ConfidenceKind,
    shift: f64,
}

impl Scoring {
    fn score(&self, model: &LinearModel, x: &[f64]) -> Result<Scored, ConfidenceError> {
        let s = confidence::score(&self.kind, model, x)?;
        Ok(Scored {
            class: s.class,
            score: s.score - self.shift,
        })
    }
}

struct Driver<'a> {
    cfg: &'a RunConfig,
    pool: Pool,
    val: ValidationSet,
    train: Dataset,
    rounds: Vec<RoundRecord>,
}

/// Run one method from a fresh copy of `pool` and `val`.
pub fn run(pool: &Pool, val: &ValidationSet, cfg: &RunConfig, rng: &mut TbalRng) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(EngineError::Config("pool is empty".into()));
    }
    if !val.is_empty() && val.dim() != pool.dim() {
        return Err(EngineError::Config(format!(
            "validation dimension {} differs from pool dimension {}",
            val.dim(),
            pool.dim()
        )));
    }
    if cfg.train.loss == Loss::Hinge && pool.num_classes() != 2 {
        return Err(EngineError::Config(format!(
            "hinge training needs 2 classes, the pool has {}",
            pool.num_classes()
        )));
    }
    let mut d = Driver {
        cfg,
        pool: pool.fresh(),
        val: val.fresh(),
        train: Dataset::new(pool.dim(), pool.num_classes()),
        rounds: Vec::new(),
    };
    let final_model = d.drive(rng)?;
    let counts = d.pool.partition_counts();
    let from_rounds: usize = d.rounds.iter().map(RoundRecord::n_auto).sum();
    if from_rounds != counts.auto {
        return Err(EngineError::Invariant {
            round: d.rounds.len(),
            message: format!("rounds report {from_rounds} auto-labels, pool holds {}", counts.auto),
        });
    }
    Ok(RunResult {
        method: cfg.method,
        n_auto: counts.auto,
        n_human: counts.human,
        val_size: val.len(),
        budget: cfg.max_train,
        pool: d.pool,
        validation: d.val,
        rounds: d.rounds,
        final_model,
    })
}

impl Driver<'_> {
    fn drive(&mut self, rng: &mut TbalRng) -> Result<LinearModel, EngineError> {
        let cfg = self.cfg;
        let seed = query::query_random(&self.pool.unlabeled_ids(), cfg.seed_size, rng);
        let mut queried = self.human_label(&seed.ids)?;
        if !cfg.method.is_active() {
            let rest = cfg.max_train - self.train.len();
            let more = query::query_random(&self.pool.unlabeled_ids(), rest, rng);
            queried.extend(self.human_label(&more.ids)?);
        }
        let mut round = 1;
        loop {
            let fit = model::fit(&self.train, &cfg.train, rng)?;
            let budget_left = self.train.len() < cfg.max_train;
            let last = !cfg.method.is_active() || !budget_left;
            let labeling = match (cfg.method, last) {
                (Method::Tbal, _) => Labeling::Threshold,
                (Method::Pl | Method::Al, true) => Labeling::Everything,
                (Method::PlSc | Method::AlSc, true) => Labeling::Threshold,
                (_, false) => Labeling::Nothing,
            };
            let remaining = self.step(round, queried, &fit, labeling)?;
            if last || remaining.is_empty() {
                return Ok(fit.model);
            }
            let n = cfg.batch_size.min(cfg.max_train - self.train.len());
            let batch = match cfg.query {
                QueryStrategy::Random => {
                    let ids: Vec<usize> = remaining.iter().map(|p| p.0).collect();
                    query::query_random(&ids, n, rng)
                }
                QueryStrategy::MarginRandom { c } => {
                    let scored = self.margin_scores(&fit.model, &remaining)?;
                    query::query_margin_random(&scored, n, c, rng)
                }
            };
            let before = self.pool.partition_counts().unlabeled;
            queried = self.human_label(&batch.ids)?;
            if self.pool.partition_counts().unlabeled + queried.len() != before || queried.is_empty() {
                return Err(EngineError::Invariant {
                    round,
                    message: "query did not drain the pool".into(),
                });
            }
            round += 1;
        }
    }

    fn human_label(&mut self, ids: &[usize]) -> Result<Vec<usize>, EngineError> {
        for &id in ids {
            let label = self.pool.query_human(id)?;
            self.train
                .push(self.pool.features(id), label)
                .map_err(|e| EngineError::Config(e.to_string()))?;
        }
        Ok(ids.to_vec())
    }

    fn scoring(&self, model: &LinearModel) -> Result<Scoring, EngineError> {
        let kind = match self.cfg.confidence {
            ConfidenceChoice::AbsMargin => ConfidenceKind::AbsMargin,
            ConfidenceChoice::Softmax => ConfidenceKind::Softmax,
            ConfidenceChoice::Energy { temperature } => ConfidenceKind::Energy { temperature },
            ConfidenceChoice::Platt => confidence::fit_platt(model, &self.train)?.kind(),
        };
        Ok(Scoring { kind, shift: 0.0 })
    }

    fn margin_scores(&self, model: &LinearModel, remaining: &[(usize, Scored)]) -> Result<Vec<(usize, f64)>, EngineError> {
        match self.cfg.margin_score {
            MarginScore::Confidence => Ok(remaining.iter().map(|(id, s)| (*id, s.score)).collect()),
            MarginScore::TopTwoGap => remaining
                .iter()
                .map(|(id, _)| {
                    let z = model.logits(self.pool.features(*id))?;
                    Ok((*id, confidence::top_two_gap(&z)))
                })
                .collect(),
        }
    }

    /// Score, threshold and label for one round. Returns the still-unlabeled
    /// points with their scores.
    fn step(
        &mut self,
        round: usize,
        queried: Vec<usize>,
        fit: &FitReport,
        labeling: Labeling,
    ) -> Result<Vec<(usize, Scored)>, EngineError> {
        let model = &fit.model;
        let mut scoring = self.scoring(model)?;
        let unl_ids = self.pool.unlabeled_ids();
        let val_ids = self.val.active_ids();
        let mut unl: Vec<(usize, Scored)> = Vec::with_capacity(unl_ids.len());
        for &id in &unl_ids {
            unl.push((id, scoring.score(model, self.pool.features(id))?));
        }
        let mut vals: Vec<(usize, ValScore)> = Vec::with_capacity(val_ids.len());
        for &i in &val_ids {
            let s = scoring.score(model, self.val.features(i))?;
            vals.push((
                i,
                ValScore {
                    class: s.class,
                    score: s.score,
                    correct: s.class == self.val.label(i),
                },
            ));
        }
        if matches!(scoring.kind, ConfidenceKind::Energy { .. }) {
            // move this round's scores into [0, ∞)
            let min = unl
                .iter()
                .map(|p| p.1.score)
                .chain(vals.iter().map(|v| v.1.score))
                .fold(f64::INFINITY, f64::min);
            if min.is_finite() {
                scoring.shift = min;
                unl.iter_mut().for_each(|p| p.1.score -= min);
                vals.iter_mut().for_each(|v| v.1.score -= min);
            }
        }

        let decision = match labeling {
            Labeling::Threshold => {
                let u: Vec<Scored> = unl.iter().map(|p| p.1).collect();
                let v: Vec<ValScore> = vals.iter().map(|p| p.1).collect();
                Some(threshold::estimate_threshold(
                    &u,
                    &v,
                    self.pool.num_classes(),
                    &self.cfg.threshold,
                )?)
            }
            _ => None,
        };

        let mut auto = Vec::new();
        let mut remaining = Vec::with_capacity(unl.len());
        for (id, s) in unl {
            let take = match (&decision, labeling) {
                (_, Labeling::Everything) => true,
                (Some(d), _) => d.accepts(s),
                _ => false,
            };
            if take {
                self.pool.auto_label(id, s.class, round)?;
                auto.push((id, s.class));
            } else {
                remaining.push((id, s));
            }
        }
        let mut deactivated = Vec::new();
        let mut val_mistakes = 0;
        if let Some(d) = &decision {
            for (i, v) in &vals {
                if d.accepts(Scored { class: v.class, score: v.score }) {
                    self.val.deactivate(*i);
                    deactivated.push(*i);
                    val_mistakes += usize::from(!v.correct);
                }
            }
        }
        let n_val_active = vals.len();
        let record = RoundRecord {
            round,
            queried,
            train_size: self.train.len(),
            model: model.clone(),
            train_loss: fit.final_loss(),
            train_error: fit.train_error,
            single_class: fit.single_class,
            decision,
            score_shift: scoring.shift,
            val_error: (!deactivated.is_empty()).then(|| val_mistakes as f64 / deactivated.len() as f64),
            val_coverage: (labeling == Labeling::Threshold && n_val_active > 0)
                .then(|| deactivated.len() as f64 / n_val_active as f64),
            auto_labeled: auto,
            val_deactivated: deactivated,
            n_unlabeled_before: unl_ids.len(),
            n_val_active,
        };
        self.check(&record, model, &scoring)?;
        self.rounds.push(record);
        Ok(remaining)
    }

    fn check(&self, rec: &RoundRecord, model: &LinearModel, scoring: &Scoring) -> Result<(), EngineError> {
        let fail = |message: String| EngineError::Invariant {
            round: rec.round,
            message,
        };
        let counts = self.pool.partition_counts();
        if counts.total() != self.pool.len() {
            return Err(fail(format!("partition {counts:?} does not cover {} points", self.pool.len())));
        }
        if counts.human != self.train.len() || self.train.len() > self.cfg.max_train {
            return Err(fail(format!(
                "{} human labels, {} training points, budget {}",
                counts.human,
                self.train.len(),
                self.cfg.max_train
            )));
        }
        if counts.unlabeled + rec.auto_labeled.len() != rec.n_unlabeled_before {
            return Err(fail("unlabeled count does not match the auto-labels".into()));
        }
        let queried: HashSet<usize> = rec.queried.iter().copied().collect();
        for &id in &rec.queried {
            if !matches!(self.pool.state(id), PointState::HumanLabeled(_)) {
                return Err(fail(format!("queried point {id} is {:?}", self.pool.state(id))));
            }
        }
        for &(id, label) in &rec.auto_labeled {
            if queried.contains(&id) {
                return Err(fail(format!("point {id} both queried and auto-labeled")));
            }
            if self.pool.state(id) != (PointState::AutoLabeled { label, round: rec.round }) {
                return Err(fail(format!("point {id} has state {:?}", self.pool.state(id))));
            }
            let s = scoring.score(model, self.pool.features(id))?;
            if s.class != label {
                return Err(fail(format!("point {id} labeled {label}, model predicts {}", s.class)));
            }
            if let Some(d) = &rec.decision {
                if !d.accepts(s) {
                    return Err(fail(format!("point {id} scored {} below its threshold", s.score)));
                }
            }
        }
        if self.val.active_count() + rec.val_deactivated.len() != rec.n_val_active {
            return Err(fail("validation mask changed outside the auto-labeled region".into()));
        }
        if let Some(d) = &rec.decision {
            for &i in &rec.val_deactivated {
                let s = scoring.score(model, self.val.features(i))?;
                if self.val.is_active(i) || !d.accepts(s) {
                    return Err(fail(format!("validation point {i} wrongly deactivated")));
                }
            }
            let eps = self.cfg.threshold.epsilon_a;
            for (class, ct) in d.classes.iter().enumerate().filter(|(_, ct)| !ct.is_infinite()) {
                let ok = matches!((ct.est_error, ct.sigma), (Some(e), Some(s)) if e + s <= eps);
                if !ok || ct.support < self.cfg.threshold.n0 {
                    return Err(fail(format!("threshold of group {class} violates its constraint")));
                }
            }
        } else if !rec.val_deactivated.is_empty() {
            return Err(fail("validation points deactivated without a threshold".into()));
        }
        if let Some(prev) = self.rounds.last() {
            if rec.n_val_active > prev.n_val_active - prev.val_deactivated.len() {
                return Err(fail("validation set grew".into()));
            }
        }
        Ok(())
    }
}
