//! Confidence functions: a model and a point map to a predicted class and a
//! score, larger meaning more confident. Every kind keeps that orientation so
//! thresholding `score >= t` means the same thing everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::model::{argmax, LinearModel, ModelError};

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite class scores")]
    NonFinite,
    #[error("{0}")]
    Unsupported(String),
}

/// Sigmoid `σ(a·margin + b)` for one predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub const IDENTITY: PlattParams = PlattParams { a: 1.0, b: 0.0 };

    pub fn prob(&self, margin: f64) -> f64 {
        sigmoid(self.a * margin + self.b)
    }
}

/// A fully specified confidence function.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceKind {
    /// Distance to the separating hyperplane, `|w·x + b| / ‖w‖` (binary models).
    AbsMargin,
    /// Largest softmax probability.
    Softmax,
    /// Negated energy `T · log Σ exp(z_c / T)`.
    Energy { temperature: f64 },
    /// Calibrated probability of being correct, one sigmoid per predicted class.
    PlattSigmoid(Vec<PlattParams>),
}

/// Confidence function as named in a run configuration. Platt parameters are
/// fitted each round, so the choice carries no numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceChoice {
    AbsMargin,
    Softmax,
    Energy { temperature: f64 },
    Platt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub class: usize,
    pub score: f64,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Overflow-safe `log Σ exp(z_i)`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_max(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1.0 / z.iter().map(|v| (v - max).exp()).sum::<f64>()
}

/// Negated energy: larger when the scores are more peaked.
pub fn neg_energy(z: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    temperature * log_sum_exp(&scaled)
}

/// Margin fed to Platt scaling: `|w·x + b|` for binary models, otherwise the
/// gap between the two largest class scores.
pub fn platt_margin(model: &LinearModel, logits: &[f64]) -> f64 {
    if model.is_binary() {
        logits[1].abs()
    } else {
        top_two_gap(logits)
    }
}

pub fn top_two_gap(z: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in z {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    first - second
}

pub fn score(kind: &ConfidenceKind, model: &LinearModel, x: &[f64]) -> Result<Scored, ConfidenceError> {
    let z = model.logits(x)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ConfidenceError::NonFinite);
    }
    let class = argmax(&z);
    let score = match kind {
        ConfidenceKind::AbsMargin => {
            if !model.is_binary() {
                return Err(ConfidenceError::Unsupported(
                    "abs_margin needs a binary hinge model".into(),
                ));
            }
            let norm = model.weight_norm(0);
            if norm > 0.0 {
                z[1].abs() / norm
            } else {
                z[1].abs()
            }
        }
        ConfidenceKind::Softmax => softmax_max(&z),
        ConfidenceKind::Energy { temperature } => {
            if !(*temperature > 0.0) {
                return Err(ConfidenceError::Unsupported(format!(
                    "energy temperature must be positive, got {temperature}"
                )));
            }
            neg_energy(&z, *temperature)
        }
        ConfidenceKind::PlattSigmoid(params) => {
            let p = params.get(class).ok_or_else(|| {
                ConfidenceError::Unsupported(format!("no Platt parameters for class {class}"))
            })?;
            p.prob(platt_margin(model, &z))
        }
    };
    if !score.is_finite() {
        return Err(ConfidenceError::NonFinite);
    }
    Ok(Scored { class, score })
}

/// Per-class sigmoid parameters plus the classes that fell back to identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PlattFit {
    pub params: Vec<PlattParams>,
    pub fallback: Vec<usize>,
}

impl PlattFit {
    pub fn kind(&self) -> ConfidenceKind {
        ConfidenceKind::PlattSigmoid(self.params.clone())
    }
}

/// Fit one sigmoid per predicted class, modeling whether the prediction is
/// correct as a function of its margin.
pub fn fit_platt(model: &LinearModel, calibration: &Dataset) -> Result<PlattFit, ConfidenceError> {
    let k = model.num_classes();
    let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); k];
    for (x, y) in calibration.rows() {
        let z = model.logits(x)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ConfidenceError::NonFinite);
        }
        let c = argmax(&z);
        per_class[c].push((platt_margin(model, &z), c == y));
    }
    let mut params = Vec::with_capacity(k);
    let mut fallback = Vec::new();
    for (c, pairs) in per_class.iter().enumerate() {
        match fit_sigmoid(pairs) {
            Some(p) => params.push(p),
            None => {
                params.push(PlattParams::IDENTITY);
                fallback.push(c);
            }
        }
    }
    Ok(PlattFit { params, fallback })
}

/// Maximum-likelihood `(a, b)` for `P(correct | m) = σ(a·m + b)` by damped Newton.
///
/// Returns `None` when both outcomes are not present.
pub fn fit_sigmoid(pairs: &[(f64, bool)]) -> Option<PlattParams> {
    let pos = pairs.iter().filter(|p| p.1).count();
    if pos == 0 || pos == pairs.len() {
        return None;
    }
    // negative log-likelihood; log σ(t) = −softplus(−t), log(1 − σ(t)) = −softplus(t)
    let nll = |a: f64, b: f64| -> f64 {
        pairs
            .iter()
            .map(|&(m, y)| {
                let t = a * m + b;
                if y {
                    softplus(-t)
                } else {
                    softplus(t)
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, 0.0);
    let mut f = nll(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(m, y) in pairs {
            let p = sigmoid(a * m + b);
            let r = p - if y { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            ga += r * m;
            gb += r;
            haa += w * m * m;
            hab += w * m;
            hbb += w;
        }
        if (ga * ga + gb * gb).sqrt() <= 1e-8 {
            break;
        }
        haa += 1e-12;
        hbb += 1e-12;
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < f {
                a = na;
                b = nb;
                f = nf;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some(PlattParams { a, b })
}
