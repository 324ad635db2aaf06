//! Auto-labeling threshold estimation from validation data.
//!
//! Candidates are the distinct scores of the still-unlabeled points. A
//! candidate `t` is kept if at least `n0` active validation points score
//! `>= t`; among those the smallest with `ê(t) + σ̂(t) <= ε_a` wins. When no
//! candidate qualifies the threshold is `+∞` and nothing is labeled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::Scored;

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("invalid threshold configuration: {0}")]
    Config(String),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("class {class} is outside 0..{num_classes}")]
    BadClass { class: usize, num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// `sqrt(ê(1 − ê) / n)`.
    StdErr,
    /// `sqrt(ln(2/δ) / (2n))`.
    Hoeffding { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub epsilon_a: f64,
    pub n0: usize,
    pub sigma: SigmaKind,
    pub per_class: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            epsilon_a: 0.01,
            n0: 25,
            sigma: SigmaKind::StdErr,
            per_class: true,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        if !(self.epsilon_a > 0.0 && self.epsilon_a < 1.0) {
            return Err(ThresholdError::Config(format!(
                "epsilon_a must lie in (0, 1), got {}",
                self.epsilon_a
            )));
        }
        if self.n0 == 0 {
            return Err(ThresholdError::Config("n0 must be >= 1".into()));
        }
        if let SigmaKind::Hoeffding { delta } = self.sigma {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(ThresholdError::Config(format!(
                    "hoeffding delta must lie in (0, 1), got {delta}"
                )));
            }
        }
        Ok(())
    }
}

/// Upper-confidence inflation for an error estimate from `n` points.
pub fn sigma(est_error: f64, n: usize, kind: SigmaKind) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let n = n as f64;
    match kind {
        SigmaKind::StdErr => (est_error * (1.0 - est_error) / n).max(0.0).sqrt(),
        SigmaKind::Hoeffding { delta } => ((2.0 / delta).ln() / (2.0 * n)).sqrt(),
    }
}

/// A validation point as seen through the current model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValScore {
    pub class: usize,
    pub score: f64,
    pub correct: bool,
}

/// Outcome for one class (or for all points when thresholds are shared).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassThreshold {
    /// `+∞` when no candidate qualified.
    pub threshold: f64,
    /// Validation points scoring at or above the threshold.
    pub support: usize,
    pub est_error: Option<f64>,
    pub sigma: Option<f64>,
    /// Distinct unlabeled scores considered.
    pub candidates: usize,
    /// Candidates with support at least `n0`.
    pub supported_candidates: usize,
}

impl ClassThreshold {
    fn infinite(candidates: usize, supported_candidates: usize) -> Self {
        ClassThreshold {
            threshold: f64::INFINITY,
            support: 0,
            est_error: None,
            sigma: None,
            candidates,
            supported_candidates,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.threshold == f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDecision {
    pub per_class: bool,
    /// One entry per class when `per_class`, otherwise a single shared entry.
    pub classes: Vec<ClassThreshold>,
    /// Set when there were no validation points at all.
    pub empty_validation: bool,
}

impl ThresholdDecision {
    pub fn threshold_for(&self, class: usize) -> f64 {
        if self.per_class {
            self.classes[class].threshold
        } else {
            self.classes[0].threshold
        }
    }

    pub fn accepts(&self, s: Scored) -> bool {
        s.score >= self.threshold_for(s.class)
    }

    pub fn all_infinite(&self) -> bool {
        self.classes.iter().all(ClassThreshold::is_infinite)
    }
}

pub fn estimate_threshold(
    unlabeled: &[Scored],
    val: &[ValScore],
    num_classes: usize,
    cfg: &ThresholdConfig,
) -> Result<ThresholdDecision, ThresholdError> {
    cfg.validate()?;
    let kind = cfg.sigma;
    estimate_with(unlabeled, val, num_classes, cfg, |e, n| sigma(e, n, kind))
}

fn estimate_with(
    unlabeled: &[Scored],
    val: &[ValScore],
    num_classes: usize,
    cfg: &ThresholdConfig,
    sig: impl Fn(f64, usize) -> f64,
) -> Result<ThresholdDecision, ThresholdError> {
    for s in unlabeled.iter().map(|u| (u.class, u.score)).chain(val.iter().map(|v| (v.class, v.score))) {
        if !s.1.is_finite() {
            return Err(ThresholdError::NonFinite(s.1));
        }
        if s.0 >= num_classes {
            return Err(ThresholdError::BadClass {
                class: s.0,
                num_classes,
            });
        }
    }
    let groups = if cfg.per_class { num_classes } else { 1 };
    let group = |c: usize| if cfg.per_class { c } else { 0 };
    let mut cand: Vec<Vec<f64>> = vec![Vec::new(); groups];
    let mut vals: Vec<Vec<(f64, bool)>> = vec![Vec::new(); groups];
    for u in unlabeled {
        cand[group(u.class)].push(u.score);
    }
    for v in val {
        vals[group(v.class)].push((v.score, v.correct));
    }
    let classes = cand
        .iter_mut()
        .zip(&vals)
        .map(|(c, v)| scan(c, v, cfg.n0, cfg.epsilon_a, &sig))
        .collect();
    Ok(ThresholdDecision {
        per_class: cfg.per_class,
        classes,
        empty_validation: val.is_empty(),
    })
}

fn scan(
    candidates: &mut Vec<f64>,
    val: &[(f64, bool)],
    n0: usize,
    epsilon: f64,
    sig: &impl Fn(f64, usize) -> f64,
) -> ClassThreshold {
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut sorted: Vec<(f64, bool)> = val.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // mistakes[j] = wrong predictions among the j highest-scoring entries
    let mut mistakes = Vec::with_capacity(sorted.len() + 1);
    mistakes.push(0usize);
    for &(_, ok) in &sorted {
        mistakes.push(mistakes.last().unwrap() + usize::from(!ok));
    }
    let mut supported = 0;
    let mut chosen = None;
    for &t in candidates.iter() {
        let support = sorted.partition_point(|v| v.0 >= t);
        if support < n0 {
            continue;
        }
        supported += 1;
        if chosen.is_some() {
            continue;
        }
        let e = mistakes[support] as f64 / support as f64;
        let s = sig(e, support);
        if e + s <= epsilon {
            chosen = Some((t, support, e, s));
        }
    }
    match chosen {
        Some((threshold, support, e, s)) => ClassThreshold {
            threshold,
            support,
            est_error: Some(e),
            sigma: Some(s),
            candidates: candidates.len(),
            supported_candidates: supported,
        },
        None => ClassThreshold::infinite(candidates.len(), supported),
    }
}
