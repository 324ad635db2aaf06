//! Linear classifiers and their SGD trainer.
//!
//! Binary hinge models keep a single weight row `w` and predict class 1 when
//! `w·x + b > 0`. Logistic models keep one row per class and predict the
//! argmax of the class scores. Parameters live in one flat vector, row by
//! row, each row holding `dim` weights followed by the bias.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::pool::TbalRng;

const MODEL_HEADER: &str = "tbal-linear-model 1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("expected input of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary hinge loss `max(0, 1 − y(w·x + b))` with `y ∈ {−1, +1}`.
    Hinge,
    /// Multinomial cross-entropy over softmax class scores.
    Logistic,
}

/// Step-size rule for SGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `1 / (l2 · t)` at step `t`, followed by projection onto the ball of
    /// radius `1/sqrt(l2)`; the bias is regularized like a weight.
    Pegasos,
    /// `learning_rate / sqrt(1 + epoch)`.
    InvSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: Loss,
    pub schedule: Schedule,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    /// Stop once the objective changes by less than this between epochs.
    pub tolerance: f64,
    pub fit_bias: bool,
    /// Keep `‖w‖ = 1` and `b = 0` after every step (binary hinge only).
    pub normalized: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Hinge,
            schedule: Schedule::InvSqrt,
            epochs: 50,
            learning_rate: 0.1,
            l2: 1e-4,
            batch_size: 32,
            tolerance: 1e-5,
            fit_bias: true,
            normalized: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(ModelError::Config("l2 and tolerance must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be >= 1".into()));
        }
        if self.schedule == Schedule::Pegasos && !(self.l2 > 0.0) {
            return Err(ModelError::Config("the pegasos schedule needs l2 > 0".into()));
        }
        if self.normalized && self.loss != Loss::Hinge {
            return Err(ModelError::Config("normalized models need the hinge loss".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    dim: usize,
    num_classes: usize,
    rows: usize,
    params: Vec<f64>,
    normalized: bool,
}

impl LinearModel {
    pub fn zeros(dim: usize, num_classes: usize, loss: Loss) -> Self {
        let rows = match loss {
            Loss::Hinge => 1,
            Loss::Logistic => num_classes,
        };
        LinearModel {
            dim,
            num_classes,
            rows,
            params: vec![0.0; rows * (dim + 1)],
            normalized: false,
        }
    }

    /// Binary model from an explicit weight vector and bias.
    pub fn binary(weights: &[f64], bias: f64) -> Self {
        let mut params = weights.to_vec();
        params.push(bias);
        LinearModel {
            dim: weights.len(),
            num_classes: 2,
            rows: 1,
            params,
            normalized: false,
        }
    }

    /// Homogeneous binary model with `w` rescaled to unit norm.
    pub fn binary_normalized(weights: &[f64]) -> Self {
        let mut m = Self::binary(weights, 0.0);
        m.project_unit_norm();
        m.normalized = true;
        m
    }

    /// Multiclass model from one weight row and bias per class.
    pub fn multiclass(weights: &[Vec<f64>], bias: &[f64]) -> Self {
        let dim = weights.first().map_or(0, Vec::len);
        let mut params = Vec::with_capacity(weights.len() * (dim + 1));
        for (w, b) in weights.iter().zip(bias) {
            assert_eq!(w.len(), dim, "ragged weight rows");
            params.extend_from_slice(w);
            params.push(*b);
        }
        LinearModel {
            dim,
            num_classes: weights.len(),
            rows: weights.len(),
            params,
            normalized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_binary(&self) -> bool {
        self.rows == 1
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self, row: usize) -> &[f64] {
        let s = row * (self.dim + 1);
        &self.params[s..s + self.dim]
    }

    pub fn bias(&self, row: usize) -> f64 {
        self.params[row * (self.dim + 1) + self.dim]
    }

    pub fn weight_norm(&self, row: usize) -> f64 {
        self.weights(row).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(ModelError::Dimension {
                expected: self.dim,
                got: x.len(),
            })
        }
    }

    fn row_score(&self, row: usize, x: &[f64]) -> f64 {
        let w = self.weights(row);
        w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias(row)
    }

    /// Signed binary margin `w·x + b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(x)?;
        if !self.is_binary() {
            return Err(ModelError::Config("decision() needs a binary model".into()));
        }
        Ok(self.row_score(0, x))
    }

    /// Per-class scores. Binary models return `(−m, m)` with `m = w·x + b`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        if self.is_binary() {
            let m = self.row_score(0, x);
            vec![-m, m]
        } else {
            (0..self.rows).map(|r| self.row_score(r, x)).collect()
        }
    }

    /// Argmax class; ties go to the smallest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, ModelError> {
        Ok(argmax(&self.logits(x)?))
    }

    fn project_unit_norm(&mut self) {
        let n = self.weight_norm(0);
        let d = self.dim;
        if n > 0.0 {
            for v in &mut self.params[..d] {
                *v /= n;
            }
        }
        self.params[d] = 0.0;
    }

    /// Plain-text serialization: a header, the shape, then one line per row.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(out, "dim {}", self.dim)?;
        writeln!(out, "classes {}", self.num_classes)?;
        writeln!(out, "rows {}", self.rows)?;
        writeln!(out, "normalized {}", self.normalized)?;
        for row in self.params.chunks_exact(self.dim + 1) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, ModelError> {
        let mut lines = input.lines();
        let mut next = || -> Result<String, ModelError> {
            lines
                .next()
                .ok_or_else(|| ModelError::Format("unexpected end of file".into()))?
                .map_err(ModelError::from)
        };
        if next()?.trim() != MODEL_HEADER {
            return Err(ModelError::Format(format!("missing `{MODEL_HEADER}` header")));
        }
        fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, ModelError> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| ModelError::Format(format!("expected `{key} <value>`, got `{line}`")))
        }
        let dim: usize = field(&next()?, "dim")?;
        let num_classes: usize = field(&next()?, "classes")?;
        let rows: usize = field(&next()?, "rows")?;
        let normalized: bool = field(&next()?, "normalized")?;
        if dim == 0 || !(rows == 1 || rows == num_classes) {
            return Err(ModelError::Format(format!(
                "inconsistent shape: dim {dim}, classes {num_classes}, rows {rows}"
            )));
        }
        let mut params = Vec::with_capacity(rows * (dim + 1));
        for r in 0..rows {
            let line = next()?;
            let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|e| ModelError::Format(format!("row {r}: {e}")))?;
            if row.len() != dim + 1 {
                return Err(ModelError::Format(format!(
                    "row {r} has {} values, expected {}",
                    row.len(),
                    dim + 1
                )));
            }
            params.extend(row);
        }
        Ok(LinearModel {
            dim,
            num_classes,
            rows,
            params,
            normalized,
        })
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Surrogate loss of one example, without regularization.
pub fn example_loss(loss: Loss, model: &LinearModel, x: &[f64], y: usize) -> f64 {
    match loss {
        Loss::Hinge => {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            (1.0 - sign * model.row_score(0, x)).max(0.0)
        }
        Loss::Logistic => {
            let z = model.logits_unchecked(x);
            crate::confidence::log_sum_exp(&z) - z[y]
        }
    }
}

/// Adds the (sub)gradient of [`example_loss`] w.r.t. the flat parameters into `grad`.
pub fn example_gradient(loss: Loss, model: &LinearModel, x: &[f64], y: usize, grad: &mut [f64]) {
    let stride = model.dim + 1;
    match loss {
        Loss::Hinge => {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            if sign * model.row_score(0, x) < 1.0 {
                for (g, xi) in grad[..model.dim].iter_mut().zip(x) {
                    *g -= sign * xi;
                }
                grad[model.dim] -= sign;
            }
        }
        Loss::Logistic => {
            let z = model.logits_unchecked(x);
            let lse = crate::confidence::log_sum_exp(&z);
            for (r, zr) in z.iter().enumerate() {
                let coef = (zr - lse).exp() - if r == y { 1.0 } else { 0.0 };
                let g = &mut grad[r * stride..(r + 1) * stride];
                for (gi, xi) in g[..model.dim].iter_mut().zip(x) {
                    *gi += coef * xi;
                }
                g[model.dim] += coef;
            }
        }
    }
}

/// Mean example loss plus `l2/2 · ‖W‖²` (biases are not penalized).
pub fn objective(loss: Loss, model: &LinearModel, train: &Dataset, l2: f64) -> f64 {
    let data: f64 = train
        .rows()
        .map(|(x, y)| example_loss(loss, model, x, y))
        .sum::<f64>()
        / train.len().max(1) as f64;
    let reg: f64 = (0..model.rows)
        .map(|r| model.weights(r).iter().map(|v| v * v).sum::<f64>())
        .sum();
    data + 0.5 * l2 * reg
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: LinearModel,
    /// Objective before training and after each epoch.
    pub loss_trace: Vec<f64>,
    pub train_error: f64,
    /// Set when the training labels contain a single class; the model then
    /// predicts that class everywhere.
    pub single_class: Option<usize>,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Train a linear model by minibatch SGD, reshuffling every epoch.
///
/// See [`Schedule`] for the step sizes.
pub fn fit(train: &Dataset, cfg: &TrainConfig, rng: &mut TbalRng) -> Result<FitReport, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let k = train.num_classes();
    if cfg.loss == Loss::Hinge && k != 2 {
        return Err(ModelError::Config(format!(
            "hinge loss is binary, the training set has {k} classes"
        )));
    }
    let dim = train.dim();
    let mut model = LinearModel::zeros(dim, k, cfg.loss);

    let first = train.label(0);
    if train.labels().iter().all(|&l| l == first) {
        match cfg.loss {
            Loss::Hinge => model.params[dim] = if first == 1 { 1.0 } else { -1.0 },
            Loss::Logistic => model.params[first * (dim + 1) + dim] = 1.0,
        }
        let loss = objective(cfg.loss, &model, train, cfg.l2);
        return Ok(FitReport {
            model,
            loss_trace: vec![loss],
            train_error: 0.0,
            single_class: Some(first),
        });
    }

    if cfg.normalized {
        // start from the class-mean difference so the projection is well defined
        let w = model.params[..dim].as_mut();
        for (x, y) in train.rows() {
            let s = if y == 1 { 1.0 } else { -1.0 };
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += s * xi;
            }
        }
        if model.weight_norm(0) == 0.0 {
            model.params[0] = 1.0;
        }
        model.project_unit_norm();
        model.normalized = true;
    }

    let stride = dim + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut trace = vec![objective(cfg.loss, &model, train, cfg.l2)];
    let mut step = 0usize;
    // pegasos reports the running mean of its iterates
    let mut avg: Option<(LinearModel, usize)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                example_gradient(cfg.loss, &model, train.row(i), train.label(i), &mut grad);
            }
            let inv = 1.0 / batch.len() as f64;
            let learn_bias = cfg.fit_bias && !cfg.normalized;
            match cfg.schedule {
                Schedule::InvSqrt => {
                    let lr = cfg.learning_rate / (1.0 + epoch as f64).sqrt();
                    for r in 0..model.rows {
                        let row = &mut model.params[r * stride..(r + 1) * stride];
                        let g = &grad[r * stride..(r + 1) * stride];
                        for j in 0..dim {
                            row[j] -= lr * (g[j] * inv + cfg.l2 * row[j]);
                        }
                        if learn_bias {
                            row[dim] -= lr * g[dim] * inv;
                        }
                    }
                }
                Schedule::Pegasos => {
                    let eta = 1.0 / (cfg.l2 * step as f64);
                    let shrink = 1.0 - eta * cfg.l2;
                    for (j, (p, g)) in model.params.iter_mut().zip(&grad).enumerate() {
                        if j % stride == dim && !learn_bias {
                            continue;
                        }
                        *p = shrink * *p - eta * g * inv;
                    }
                    let radius = 1.0 / cfg.l2.sqrt();
                    let norm = model.params.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > radius {
                        model.params.iter_mut().for_each(|v| *v *= radius / norm);
                    }
                }
            }
            if cfg.normalized {
                model.project_unit_norm();
            }
            // the first pegasos step (shrink factor 0) is left out of the mean
            if cfg.schedule == Schedule::Pegasos && step > 1 {
                let (mean, n) = avg.get_or_insert_with(|| (model.clone(), 0));
                *n += 1;
                let w = 1.0 / *n as f64;
                for (m, p) in mean.params.iter_mut().zip(&model.params) {
                    *m += w * (p - *m);
                }
                if cfg.normalized {
                    mean.project_unit_norm();
                }
            }
        }
        let current = avg.as_ref().map_or(&model, |a| &a.0);
        let obj = objective(cfg.loss, current, train, cfg.l2);
        let prev = *trace.last().unwrap_or(&obj);
        trace.push(obj);
        if (prev - obj).abs() < cfg.tolerance {
            break;
        }
    }
    if let Some((mean, _)) = avg {
        model = mean;
    }

    let wrong = train
        .rows()
        .filter(|(x, y)| argmax(&model.logits_unchecked(x)) != *y)
        .count();
    Ok(FitReport {
        train_error: wrong as f64 / train.len() as f64,
        model,
        loss_trace: trace,
        single_class: None,
    })
}
