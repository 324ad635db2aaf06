//! Numeric evaluators for the error and coverage guarantees, plus a
//! Monte-Carlo harness that checks the error bound against real runs.
//!
//! Counts are taken as `f64` so that very large proxies (`1e12`) can stand in
//! for limits.

use std::f64::consts::{E, PI};

use thiserror::Error;

use crate::data::{gen_unit_ball, split_pool_val, DatasetKind};
use crate::engine::{self, EngineError, Method, RunConfig, RunResult};
use crate::metrics::{self, MetricsError};
use crate::pool::{streams, RngSeed};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("outside the bound's domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

fn domain(msg: String) -> TheoryError {
    TheoryError::Domain(msg)
}

fn check_delta(delta: f64) -> Result<(), TheoryError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_n_d(n: f64, d: f64) -> Result<(), TheoryError> {
    if d >= 1.0 && n >= d && n.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("need n >= d >= 1, got n = {n}, d = {d}")))
    }
}

/// Rademacher complexity bound of a VC-dimension-`d` class on `n` points,
/// `sqrt((2d/n) ln(e n / d))`.
pub fn rademacher_vc(n: f64, d: f64) -> Result<f64, TheoryError> {
    check_n_d(n, d)?;
    Ok((2.0 * d / n * (E * n / d).ln()).sqrt())
}

/// `sqrt((2/n)(2d ln(e n/d) + ln(8k/δ)))`, the uniform-deviation term of the
/// VC-instantiated bound.
pub fn vc_deviation(n: f64, d: f64, k: usize, delta: f64) -> Result<f64, TheoryError> {
    check_n_d(n, d)?;
    check_delta(delta)?;
    if k == 0 {
        return Err(domain("k must be >= 1".into()));
    }
    Ok((2.0 / n * (2.0 * d * (E * n / d).ln() + (8.0 * k as f64 / delta).ln())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundInput {
    /// Active validation points, `n_v`.
    pub n_val: f64,
    /// Points auto-labeled, `n_a`.
    pub n_auto: f64,
    /// Validation error in the auto-labeled region.
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// VC dimension.
    pub d: f64,
    pub delta: f64,
    /// Lower bound on the mass of every round's auto-labeled region.
    pub p0: f64,
    /// One entry per round; `k` is their number.
    pub rounds: Vec<RoundInput>,
    /// Pool size `N`.
    pub n_total: f64,
    pub t_hat_min: f64,
}

impl BoundInputs {
    pub fn k(&self) -> usize {
        self.rounds.len()
    }

    pub fn n_auto_total(&self) -> f64 {
        self.rounds.iter().map(|r| r.n_auto).sum()
    }

    fn validate(&self) -> Result<(), TheoryError> {
        check_delta(self.delta)?;
        // p0 = 1 is a legal mass bound; a run that covers all of validation hits it
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(domain(format!("p0 must lie in (0, 1], got {}", self.p0)));
        }
        if self.rounds.is_empty() {
            return Err(domain("no rounds".into()));
        }
        if !(self.n_auto_total() >= 1.0) {
            return Err(domain("nothing was auto-labeled".into()));
        }
        Ok(())
    }
}

/// Auto-labeling error bound with VC-based complexities:
///
/// `Σ (n_a/N_a)[ê + (4/p0) dev(n_v)] + (4/p0) sqrt((2k/N_a)(2d ln(e N_a/d) + ln(8k/δ)))`.
///
/// Rounds with `n_a = 0` carry no weight and are skipped.
pub fn error_bound_vc(b: &BoundInputs) -> Result<f64, TheoryError> {
    b.validate()?;
    let k = b.k();
    let n_a = b.n_auto_total();
    let scale = 4.0 / b.p0;
    let mut total = 0.0;
    for r in b.rounds.iter().filter(|r| r.n_auto > 0.0) {
        total += r.n_auto / n_a * (r.val_error + scale * vc_deviation(r.n_val, b.d, k, b.delta)?);
    }
    check_n_d(n_a, b.d)?;
    let last = (2.0 * k as f64 / n_a * (2.0 * b.d * (E * n_a / b.d).ln() + (8.0 * k as f64 / b.delta).ln())).sqrt();
    Ok(total + scale * last)
}

/// The error bound for an arbitrary class, given its Rademacher complexity
/// `complexity(n)` on `n` points.
pub fn error_bound_general(b: &BoundInputs, complexity: impl Fn(f64) -> f64) -> Result<f64, TheoryError> {
    b.validate()?;
    let k = b.k() as f64;
    let n_a = b.n_auto_total();
    let log_term = (8.0 * k / b.delta).ln();
    let scale = 4.0 / b.p0;
    let mut total = 0.0;
    let mut weighted = 0.0;
    for r in b.rounds.iter().filter(|r| r.n_auto > 0.0) {
        if !(r.n_val >= 1.0) {
            return Err(domain("a round with auto-labels has no validation points".into()));
        }
        let w = r.n_auto / n_a;
        let inner = complexity(r.n_val) + 2.0 / b.p0 * (log_term / r.n_val).sqrt();
        total += w * (r.val_error + scale * inner);
        weighted += w * complexity(r.n_auto);
    }
    Ok(total + scale * (weighted + (k / n_a * log_term).sqrt()))
}

/// Coverage lower bound for unit-norm homogeneous separators on the uniform ball:
/// `1 − t √(4d/π) − 2k sqrt((2/N)(2d ln(eN/d) + ln(8k/δ)))`. May be negative.
pub fn coverage_bound_linear(t_hat_min: f64, d: f64, k: usize, n: f64, delta: f64) -> Result<f64, TheoryError> {
    if !(0.0..=1.0).contains(&t_hat_min) {
        return Err(domain(format!("t_hat_min must lie in [0, 1], got {t_hat_min}")));
    }
    let dev = vc_deviation(n, d, k, delta)?;
    Ok(1.0 - t_hat_min * (4.0 * d / PI).sqrt() - 2.0 * k as f64 * dev)
}

/// Upper bound on `P(x_1 ∈ [0, γ1], x_2 ∈ [γ2, 1])` for `x` uniform in the
/// `d`-dimensional unit ball: `γ1 √d / (2√π) · exp(−(d − 2) γ2² / 2)`.
pub fn band_probability_bound(gamma1: f64, gamma2: f64, d: f64) -> Result<f64, TheoryError> {
    if !(0.0..=1.0).contains(&gamma1) || !(0.0..=1.0).contains(&gamma2) {
        return Err(domain(format!("gammas must lie in [0, 1], got {gamma1}, {gamma2}")));
    }
    if !(d >= 2.0) {
        return Err(domain(format!("d must be >= 2, got {d}")));
    }
    Ok(gamma1 * d.sqrt() / (2.0 * PI.sqrt()) * (-(d - 2.0) * gamma2 * gamma2 / 2.0).exp())
}

/// Smallest validation size not ruled out by the lower bound
/// `n_v < 12σ²/ε² · ln(4 c2)`.
pub fn min_validation_size(sigma: f64, epsilon: f64, c2: f64) -> Result<u64, TheoryError> {
    if !(sigma > 0.0 && epsilon > 0.0 && c2 > 0.0) {
        return Err(domain(format!(
            "sigma, epsilon and c2 must be positive, got {sigma}, {epsilon}, {c2}"
        )));
    }
    let log = (4.0 * c2).ln();
    if !(log > 0.0) {
        return Err(domain(format!("ln(4 c2) must be positive, got {log}")));
    }
    let v = 12.0 * sigma * sigma * log / (epsilon * epsilon);
    // absorb rounding noise such as 1200.0000000000002
    let r = v.round();
    let v = if (v - r).abs() <= 1e-9 * r.max(1.0) { r } else { v };
    Ok(v.ceil() as u64)
}

/// Plug a finished run into [`BoundInputs`].
///
/// `p0` is estimated as the smallest fraction of active validation points
/// that fell inside a round's auto-labeled region, over rounds that
/// auto-labeled something. Only thresholding rounds count toward `k`.
pub fn bound_inputs_from_run(run: &RunResult, d: f64, delta: f64) -> Result<BoundInputs, TheoryError> {
    let mut rounds = Vec::new();
    let mut p0 = f64::INFINITY;
    let mut t_min = f64::INFINITY;
    for r in run.rounds.iter().filter(|r| r.decision.is_some()) {
        let n_auto = r.n_auto() as f64;
        if n_auto > 0.0 {
            p0 = p0.min(r.val_coverage.unwrap_or(0.0));
        }
        if let Some(dec) = &r.decision {
            for c in &dec.classes {
                t_min = t_min.min(c.threshold);
            }
        }
        rounds.push(RoundInput {
            n_val: r.n_val_active as f64,
            n_auto,
            val_error: r.val_error.unwrap_or(0.0),
        });
    }
    Ok(BoundInputs {
        d,
        delta,
        p0,
        rounds,
        n_total: run.pool.len() as f64,
        t_hat_min: t_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundCheck {
    /// The bound is at least 1 or could not be evaluated.
    Vacuous { bound: Option<f64> },
    Holds { err: f64, bound: f64 },
    Violated { err: f64, bound: f64 },
}

pub fn check_run(run: &RunResult, err_hat: Option<f64>, d: f64, delta: f64) -> BoundCheck {
    let Some(err) = err_hat else {
        return BoundCheck::Vacuous { bound: None };
    };
    let bound = bound_inputs_from_run(run, d, delta).and_then(|b| error_bound_vc(&b));
    match bound {
        Ok(bound) if bound < 1.0 => {
            if err <= bound {
                BoundCheck::Holds { err, bound }
            } else {
                BoundCheck::Violated { err, bound }
            }
        }
        Ok(bound) => BoundCheck::Vacuous { bound: Some(bound) },
        Err(_) => BoundCheck::Vacuous { bound: None },
    }
}

/// Unit-Ball runs used to test the error bound empirically.
#[derive(Debug, Clone, PartialEq)]
pub struct McSetup {
    pub d: usize,
    pub pool_size: usize,
    pub val_size: usize,
    pub max_train: usize,
    pub epsilon_a: f64,
    pub delta: f64,
    pub seed: RngSeed,
}

impl McSetup {
    pub fn unit_ball(d: usize, val_size: usize) -> Self {
        McSetup {
            d,
            pool_size: 8000,
            val_size,
            max_train: 500,
            epsilon_a: 0.05,
            delta: 0.05,
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub trials: usize,
    pub checks: Vec<BoundCheck>,
    pub violations: usize,
    pub vacuous: usize,
    /// `δ + 3 sqrt(δ / trials)`.
    pub allowed_rate: f64,
    pub smallest_bound: Option<f64>,
    pub largest_error: Option<f64>,
}

impl McReport {
    pub fn violation_rate(&self) -> f64 {
        let checked = self.trials - self.vacuous;
        if checked == 0 {
            0.0
        } else {
            self.violations as f64 / checked as f64
        }
    }

    pub fn within_allowance(&self) -> bool {
        self.violation_rate() <= self.allowed_rate
    }
}

/// Run `trials` independent TBAL runs on fresh Unit-Ball data and compare each
/// run's error with its bound. Trial `j` uses seed `setup.seed + j`.
pub fn verify_error_bound_mc(setup: &McSetup, trials: usize) -> Result<McReport, TheoryError> {
    let mut checks = Vec::with_capacity(trials);
    for j in 0..trials {
        let seed = setup.seed.offset(j as u64);
        let data = gen_unit_ball(setup.d, setup.pool_size + setup.val_size, &mut seed.stream(streams::DATA))?;
        let (pool, val) = split_pool_val(&data, setup.pool_size, setup.val_size, &mut seed.stream(streams::SPLIT))?;
        let mut cfg = RunConfig::for_dataset(Method::Tbal, DatasetKind::UnitBall, setup.max_train);
        cfg.threshold.epsilon_a = setup.epsilon_a;
        let run = engine::run(&pool, &val, &cfg, &mut seed.stream(streams::RUN))?;
        let report = metrics::evaluate(&run, &pool)?;
        checks.push(check_run(&run, report.err_hat, setup.d as f64, setup.delta));
    }
    let violations = checks.iter().filter(|c| matches!(c, BoundCheck::Violated { .. })).count();
    let vacuous = checks.iter().filter(|c| matches!(c, BoundCheck::Vacuous { .. })).count();
    let bounds = checks.iter().filter_map(|c| match c {
        BoundCheck::Vacuous { bound } => *bound,
        BoundCheck::Holds { bound, .. } | BoundCheck::Violated { bound, .. } => Some(*bound),
    });
    let smallest_bound = bounds.fold(None, |m: Option<f64>, b| Some(m.map_or(b, |m| m.min(b))));
    let largest_error = checks
        .iter()
        .filter_map(|c| match c {
            BoundCheck::Holds { err, .. } | BoundCheck::Violated { err, .. } => Some(*err),
            BoundCheck::Vacuous { .. } => None,
        })
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    Ok(McReport {
        trials,
        checks,
        violations,
        vacuous,
        allowed_rate: setup.delta + 3.0 * (setup.delta / trials.max(1) as f64).sqrt(),
        smallest_bound,
        largest_error,
    })
}
