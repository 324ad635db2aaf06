//! Acceptance criteria. Each test prints one `PASS` / `FAIL` line per check
//! and fails if any check fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use tbal_core::confidence::{self, ConfidenceChoice};
use tbal_core::data::{gen_xor, load_mnist_idx, split_pool_val};
use tbal_core::engine::{run, Method, RunConfig};
use tbal_core::metrics::{evaluate, MetricReport};
use tbal_core::model::{example_gradient, example_loss};
use tbal_core::pool::streams;
use tbal_core::theory::{
    band_probability_bound, coverage_bound_linear, error_bound_vc, min_validation_size, rademacher_vc,
    verify_error_bound_mc, BoundInputs, McSetup, RoundInput,
};
use tbal_core::threshold::{estimate_threshold, ValScore};
use tbal_core::{
    ConfidenceKind, Dataset, DatasetKind, DatasetSpec, LinearModel, Loss, PointState, Pool, RngSeed, RunResult,
    Scored, SigmaKind, TbalRng, ThresholdConfig, ValidationSet,
};

/// Prints the verdict line and returns whether it passed.
fn verdict(label: &str, ok: bool, detail: String) -> bool {
    println!("{} {label}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

/// Keeps the heavy sweeps from sharing the CPU, so their timings mean something.
static HEAVY: Mutex<()> = Mutex::new(());

struct Outcome {
    seed: u64,
    report: MetricReport,
    audit: Result<(), String>,
}

struct Sweep {
    label: String,
    outcomes: Vec<Outcome>,
    elapsed: Duration,
    /// Seed 0 replayed to the same queries, thresholds and labels.
    deterministic: bool,
}

impl Sweep {
    fn mean(&self, f: impl Fn(&MetricReport) -> f64) -> f64 {
        self.outcomes.iter().map(|o| f(&o.report)).sum::<f64>() / self.outcomes.len() as f64
    }

    fn err(&self) -> f64 {
        // runs that labeled nothing made no mistakes
        self.mean(|r| r.err_hat.unwrap_or(0.0))
    }

    fn cov(&self) -> f64 {
        self.mean(|r| r.cov_hat)
    }
}

fn kind_of(choice: &ConfidenceChoice) -> Result<ConfidenceKind, String> {
    match choice {
        ConfidenceChoice::AbsMargin => Ok(ConfidenceKind::AbsMargin),
        ConfidenceChoice::Softmax => Ok(ConfidenceKind::Softmax),
        other => Err(format!("audit does not rescore {other:?}")),
    }
}

/// Replays a finished run from its round records and checks every round
/// against a fresh rescoring with that round's model.
fn audit(pool: &Pool, val: &ValidationSet, cfg: &RunConfig, r: &RunResult) -> Result<(), String> {
    let kind = kind_of(&cfg.confidence)?;
    let score = |m: &LinearModel, x: &[f64]| confidence::score(&kind, m, x).map_err(|e| e.to_string());
    let mut unl: BTreeSet<usize> = (0..pool.len()).collect();
    let mut active: BTreeSet<usize> = (0..val.len()).collect();
    let mut human = BTreeSet::new();
    let mut auto = BTreeSet::new();
    let last = r.rounds.len();
    for rec in &r.rounds {
        let at = |msg: String| format!("round {}: {msg}", rec.round);
        for id in &rec.queried {
            if !unl.remove(id) {
                return Err(at(format!("queried {id} twice")));
            }
            human.insert(*id);
        }
        if human.len() > cfg.max_train {
            return Err(at(format!("{} human labels over budget {}", human.len(), cfg.max_train)));
        }
        if rec.n_unlabeled_before != unl.len() || rec.n_val_active != active.len() {
            return Err(at("round start counts disagree with the replay".into()));
        }
        let mut expect_auto = BTreeSet::new();
        let mut expect_gone = BTreeSet::new();
        if let Some(d) = &rec.decision {
            let group = |c: usize| if d.per_class { c } else { 0 };
            let mut val_scores = Vec::new();
            for &i in &active {
                let s = score(&rec.model, val.features(i))?;
                val_scores.push((s.class, s.score, s.class == val.label(i)));
                if s.score >= d.classes[group(s.class)].threshold {
                    expect_gone.insert(i);
                }
            }
            for &id in &unl {
                let s = score(&rec.model, pool.features(id))?;
                if s.score >= d.classes[group(s.class)].threshold {
                    expect_auto.insert((id, s.class));
                }
            }
            for (g, ct) in d.classes.iter().enumerate().filter(|(_, c)| !c.is_infinite()) {
                let inside: Vec<bool> = val_scores
                    .iter()
                    .filter(|v| group(v.0) == g && v.1 >= ct.threshold)
                    .map(|v| v.2)
                    .collect();
                let e = inside.iter().filter(|ok| !**ok).count() as f64 / inside.len().max(1) as f64;
                let sig = match cfg.threshold.sigma {
                    SigmaKind::StdErr => (e * (1.0 - e) / inside.len() as f64).sqrt(),
                    SigmaKind::Hoeffding { delta } => ((2.0 / delta).ln() / (2.0 * inside.len() as f64)).sqrt(),
                };
                if inside.len() != ct.support || inside.len() < cfg.threshold.n0 {
                    return Err(at(format!("group {g} support {} vs recorded {}", inside.len(), ct.support)));
                }
                if e + sig > cfg.threshold.epsilon_a + 1e-12 || ct.est_error != Some(e) {
                    return Err(at(format!("group {g} threshold breaks its error constraint")));
                }
            }
        } else if rec.round == last && matches!(cfg.method, Method::Pl | Method::Al) {
            for &id in &unl {
                expect_auto.insert((id, score(&rec.model, pool.features(id))?.class));
            }
        }
        let got_auto: BTreeSet<(usize, usize)> = rec.auto_labeled.iter().copied().collect();
        if got_auto != expect_auto {
            return Err(at(format!("auto-labeled {} points, replay says {}", got_auto.len(), expect_auto.len())));
        }
        let got_gone: BTreeSet<usize> = rec.val_deactivated.iter().copied().collect();
        if got_gone != expect_gone {
            return Err(at("validation deactivation disagrees with the replay".into()));
        }
        for (id, _) in &expect_auto {
            unl.remove(id);
            auto.insert(*id);
        }
        active.retain(|i| !expect_gone.contains(i));
    }
    let counts = r.counts();
    if counts.total() != pool.len() || counts.human != human.len() || counts.auto != auto.len() {
        return Err(format!("final partition {counts:?} disagrees with the replay"));
    }
    for (id, st) in r.pool.states().iter().enumerate() {
        let ok = match st {
            PointState::Unlabeled => unl.contains(&id),
            PointState::HumanLabeled(_) => human.contains(&id),
            PointState::AutoLabeled { .. } => auto.contains(&id),
        };
        if !ok {
            return Err(format!("point {id} ended as {st:?}"));
        }
    }
    if r.validation.active_count() != active.len() {
        return Err("final validation mask disagrees with the replay".into());
    }
    Ok(())
}

fn run_sweep(
    label: String,
    seeds: std::ops::Range<u64>,
    cfg: &RunConfig,
    split: impl Fn(u64) -> (Pool, ValidationSet),
) -> Sweep {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut deterministic = true;
    for seed in seeds {
        let (pool, val) = split(seed);
        let result = run(&pool, &val, cfg, &mut RngSeed(seed).stream(streams::RUN))
            .unwrap_or_else(|e| panic!("{label} seed {seed}: {e}"));
        let report = evaluate(&result, &pool).unwrap();
        let audit = audit(&pool, &val, cfg, &result);
        if outcomes.is_empty() {
            let again = run(&pool, &val, cfg, &mut RngSeed(seed).stream(streams::RUN)).unwrap();
            deterministic = again.queried_ids() == result.queried_ids()
                && again.thresholds() == result.thresholds()
                && again.pool.states() == result.pool.states();
        }
        outcomes.push(Outcome { seed, report, audit });
    }
    Sweep {
        label,
        outcomes,
        elapsed: start.elapsed(),
        deterministic,
    }
}

fn xor_split(seed: u64) -> (Pool, ValidationSet) {
    let s = RngSeed(seed);
    let spec = DatasetSpec::xor();
    let data = gen_xor(spec.n_total, spec.radius, &mut s.stream(streams::DATA)).unwrap();
    split_pool_val(&data, spec.pool_size, spec.val_size, &mut s.stream(streams::SPLIT)).unwrap()
}

fn unit_ball_split(seed: u64) -> (Pool, ValidationSet) {
    let s = RngSeed(seed);
    let spec = DatasetSpec::unit_ball(30);
    let data = spec.build(&mut s.stream(streams::DATA)).unwrap();
    split_pool_val(&data, spec.pool_size, spec.val_size, &mut s.stream(streams::SPLIT)).unwrap()
}

const XOR_METHODS: [Method; 3] = [Method::Tbal, Method::Al, Method::AlSc];

fn xor_sweeps() -> &'static Vec<Sweep> {
    static CELL: OnceLock<Vec<Sweep>> = OnceLock::new();
    CELL.get_or_init(|| {
        XOR_METHODS
            .iter()
            .map(|&m| {
                let cfg = RunConfig::for_dataset(m, DatasetKind::Xor, 500);
                run_sweep(format!("xor {m}"), 0..10, &cfg, xor_split)
            })
            .collect()
    })
}

fn unit_ball_budget_sweeps() -> &'static Vec<(usize, Sweep)> {
    static CELL: OnceLock<Vec<(usize, Sweep)>> = OnceLock::new();
    CELL.get_or_init(|| {
        [100, 200, 500]
            .into_iter()
            .map(|nq| {
                let cfg = RunConfig::for_dataset(Method::Tbal, DatasetKind::UnitBall, nq);
                (nq, run_sweep(format!("unit ball N_q={nq}"), 0..10, &cfg, unit_ball_split))
            })
            .collect()
    })
}

fn unit_ball_val_sweeps() -> &'static Vec<(usize, Sweep)> {
    static CELL: OnceLock<Vec<(usize, Sweep)>> = OnceLock::new();
    CELL.get_or_init(|| {
        [100, 500, 2000, 4000]
            .into_iter()
            .map(|nv| {
                let cfg = RunConfig::for_dataset(Method::Tbal, DatasetKind::UnitBall, 500);
                let split = |seed| {
                    let (pool, val) = unit_ball_split(seed);
                    (pool, val.truncated(nv))
                };
                (nv, run_sweep(format!("unit ball N_v={nv}"), 0..10, &cfg, split))
            })
            .collect()
    })
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("TBAL_DATA_DIR")
        .map(|d| PathBuf::from(d).join("mnist"))
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_sweep() -> &'static Result<Sweep, String> {
    static CELL: OnceLock<Result<Sweep, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = mnist_dir();
        let data: Dataset = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
            .map_err(|e| format!("{e} (set TBAL_DATA_DIR to a directory holding mnist/)"))?;
        let mut cfg = RunConfig::for_dataset(Method::Tbal, DatasetKind::Mnist, 4000);
        cfg.threshold.epsilon_a = 0.05;
        let split = |seed| split_pool_val(&data, 48_000, 12_000, &mut RngSeed(seed).stream(streams::SPLIT)).unwrap();
        Ok(run_sweep("mnist".into(), 0..3, &cfg, split))
    })
}

#[test]
fn c1_xor_reproduction() {
    let sweeps = xor_sweeps();
    let (tbal, al, al_sc) = (&sweeps[0], &sweeps[1], &sweeps[2]);
    let elapsed: Duration = sweeps.iter().map(|s| s.elapsed).sum();
    let mut ok = true;
    for s in sweeps {
        let per_seed: Vec<String> = s
            .outcomes
            .iter()
            .map(|o| format!("{}:{:.3}/{:.3}", o.seed, o.report.err_hat.unwrap_or(0.0), o.report.cov_hat))
            .collect();
        println!("  {} err/cov per seed: {}", s.label, per_seed.join(" "));
    }
    ok &= verdict(
        "C1 xor tbal",
        tbal.err() <= 0.05 && tbal.cov() >= 0.80,
        format!("mean err {:.4} (<= 0.05), mean cov {:.4} (>= 0.80)", tbal.err(), tbal.cov()),
    );
    ok &= verdict(
        "C1 xor al",
        (0.18..=0.32).contains(&al.err()) && al.cov() >= 0.95,
        format!("mean err {:.4} (in [0.18, 0.32]), mean cov {:.4} (>= 0.95)", al.err(), al.cov()),
    );
    ok &= verdict(
        "C1 xor al+sc",
        al_sc.cov() <= 0.40 && al_sc.err() <= 0.05,
        format!("mean cov {:.4} (<= 0.40), mean err {:.4} (<= 0.05)", al_sc.cov(), al_sc.err()),
    );
    ok &= verdict(
        "C1 xor runtime",
        elapsed <= Duration::from_secs(120),
        format!("{:.1}s for 30 runs (<= 120s)", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn c2_unit_ball_error_control() {
    let sweeps = unit_ball_budget_sweeps();
    let mut ok = true;
    for (nq, s) in sweeps {
        ok &= verdict(
            &format!("C2 unit ball N_q={nq}"),
            s.err() <= 0.03,
            format!("mean err {:.4} (<= 0.03), mean cov {:.4}", s.err(), s.cov()),
        );
    }
    let nq: Vec<f64> = sweeps.iter().map(|(n, _)| *n as f64).collect();
    let cov: Vec<f64> = sweeps.iter().map(|(_, s)| s.cov()).collect();
    let rho = spearman(&nq, &cov);
    ok &= verdict("C2 coverage rank correlation", rho >= 0.9, format!("spearman {rho:.3} (>= 0.9)"));
    let elapsed: Duration = sweeps.iter().map(|(_, s)| s.elapsed).sum();
    ok &= verdict(
        "C2 runtime",
        elapsed <= Duration::from_secs(300),
        format!("{:.1}s (<= 300s)", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

#[test]
fn c3_validation_size_effect() {
    let sweeps = unit_ball_val_sweeps();
    for (nv, s) in sweeps {
        println!("  N_v={nv}: mean err {:.4}, mean cov {:.4}", s.err(), s.cov());
    }
    let small = &sweeps[0].1;
    let large = &sweeps[sweeps.len() - 1].1;
    let mut ok = true;
    ok &= verdict(
        "C3 error shrinks with validation",
        large.err() <= small.err(),
        format!("N_v=4000 err {:.4} <= N_v=100 err {:.4}", large.err(), small.err()),
    );
    ok &= verdict(
        "C3 error at N_v=4000",
        large.err() <= 0.03,
        format!("mean err {:.4} (<= 0.03)", large.err()),
    );
    let elapsed: Duration = sweeps.iter().map(|(_, s)| s.elapsed).sum();
    ok &= verdict(
        "C3 runtime",
        elapsed <= Duration::from_secs(300),
        format!("{:.1}s (<= 300s)", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

#[test]
fn c4_mnist_linear() {
    let s = match mnist_sweep() {
        Ok(s) => s,
        Err(e) => {
            verdict("C4 mnist", false, format!("data unavailable: {e}"));
            panic!("mnist data unavailable");
        }
    };
    let mut ok = true;
    let covs: Vec<f64> = s.outcomes.iter().map(|o| o.report.cov_hat).collect();
    ok &= verdict(
        "C4 mnist tbal",
        s.err() <= 0.08 && covs.iter().all(|&c| c >= 0.30),
        format!("mean err {:.4} (<= 0.08), coverage per seed {covs:.3?} (each >= 0.30)", s.err()),
    );
    ok &= verdict(
        "C4 runtime",
        s.elapsed <= Duration::from_secs(900),
        format!("{:.1}s (<= 900s)", s.elapsed.as_secs_f64()),
    );
    assert!(ok);
}

/// Exhaustive threshold search straight from the definition.
fn exhaustive(unl: &[Scored], val: &[ValScore], classes: usize, cfg: &ThresholdConfig) -> Vec<(f64, usize)> {
    let groups = if cfg.per_class { classes } else { 1 };
    let group = |c: usize| if cfg.per_class { c } else { 0 };
    (0..groups)
        .map(|g| {
            let mut cands: Vec<f64> = unl.iter().filter(|u| group(u.class) == g).map(|u| u.score).collect();
            cands.sort_by(f64::total_cmp);
            cands.dedup();
            for t in cands {
                let inside: Vec<&ValScore> = val.iter().filter(|v| group(v.class) == g && v.score >= t).collect();
                let n = inside.len();
                if n < cfg.n0 {
                    continue;
                }
                let e = inside.iter().filter(|v| !v.correct).count() as f64 / n as f64;
                let sig = match cfg.sigma {
                    SigmaKind::StdErr => (e * (1.0 - e) / n as f64).sqrt(),
                    SigmaKind::Hoeffding { delta } => ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt(),
                };
                if e + sig <= cfg.epsilon_a {
                    return (t, n);
                }
            }
            (f64::INFINITY, 0)
        })
        .collect()
}

#[test]
fn c5_threshold_oracle_equivalence() {
    let mut rng = RngSeed(5).rng();
    let trials = 1000;
    let mut agree = 0;
    let mut finite = 0;
    for _ in 0..trials {
        let classes = rng.random_range(2..=4);
        let grid = rng.random_range(3..=30);
        let score = |r: &mut TbalRng| r.random_range(0..grid) as f64 / grid as f64;
        let unl: Vec<Scored> = (0..rng.random_range(0..=50))
            .map(|_| Scored {
                class: rng.random_range(0..classes),
                score: score(&mut rng),
            })
            .collect();
        let val: Vec<ValScore> = (0..rng.random_range(0..=50))
            .map(|_| ValScore {
                class: rng.random_range(0..classes),
                score: score(&mut rng),
                correct: rng.random_bool(0.8),
            })
            .collect();
        let cfg = ThresholdConfig {
            epsilon_a: rng.random_range(0.05..0.6),
            n0: rng.random_range(1..=8),
            sigma: if rng.random_bool(0.5) {
                SigmaKind::StdErr
            } else {
                SigmaKind::Hoeffding {
                    delta: rng.random_range(0.05..0.9),
                }
            },
            per_class: rng.random_bool(0.7),
        };
        let got = estimate_threshold(&unl, &val, classes, &cfg).unwrap();
        let want = exhaustive(&unl, &val, classes, &cfg);
        let same = got.classes.len() == want.len()
            && got
                .classes
                .iter()
                .zip(&want)
                .all(|(c, w)| c.threshold == w.0 && (c.is_infinite() || c.support == w.1));
        agree += usize::from(same);
        finite += want.iter().filter(|w| w.0.is_finite()).count();
    }
    let ok = verdict(
        "C5 threshold oracle",
        agree == trials,
        format!("{agree}/{trials} instances agree ({finite} finite thresholds)"),
    );
    assert!(ok);
}

#[test]
fn c6_invariants_and_determinism() {
    let mut sweeps: Vec<&Sweep> = xor_sweeps().iter().collect();
    sweeps.extend(unit_ball_budget_sweeps().iter().map(|(_, s)| s));
    sweeps.extend(unit_ball_val_sweeps().iter().map(|(_, s)| s));
    let mnist = mnist_sweep();
    if let Ok(s) = mnist {
        sweeps.push(s);
    }
    let mut ok = true;
    for s in &sweeps {
        let bad: Vec<String> = s
            .outcomes
            .iter()
            .filter_map(|o| o.audit.as_ref().err().map(|e| format!("seed {}: {e}", o.seed)))
            .collect();
        ok &= verdict(
            &format!("C6 {}", s.label),
            bad.is_empty() && s.deterministic,
            format!(
                "{} runs audited, {} failures{}, replay {}",
                s.outcomes.len(),
                bad.len(),
                bad.first().map(|b| format!(" ({b})")).unwrap_or_default(),
                if s.deterministic { "identical" } else { "DIFFERS" }
            ),
        );
    }
    if let Err(e) = mnist {
        ok &= verdict("C6 mnist", false, format!("data unavailable: {e}"));
    }
    assert!(ok);
}

// Second implementations, written in log form.

fn rademacher_alt(n: f64, d: f64) -> f64 {
    (2.0 * d * (1.0 + n.ln() - d.ln()) / n).sqrt()
}

fn dev_alt(n: f64, d: f64, k: f64, delta: f64) -> f64 {
    ((4.0 * d * (1.0 + n.ln() - d.ln()) + 2.0 * (8f64.ln() + k.ln() - delta.ln())) / n).sqrt()
}

fn error_bound_alt(b: &BoundInputs) -> f64 {
    let k = b.rounds.len() as f64;
    let na: f64 = b.rounds.iter().map(|r| r.n_auto).sum();
    let c = 4.0 / b.p0;
    let mut acc = 0.0;
    for r in &b.rounds {
        if r.n_auto > 0.0 {
            acc += r.n_auto * r.val_error + c * r.n_auto * dev_alt(r.n_val, b.d, k, b.delta);
        }
    }
    acc / na + c * k.sqrt() * dev_alt(na, b.d, k, b.delta)
}

fn coverage_alt(t: f64, d: f64, k: f64, n: f64, delta: f64) -> f64 {
    1.0 - 2.0 * t * (d / std::f64::consts::PI).sqrt() - 2.0 * k * dev_alt(n, d, k, delta)
}

fn band_alt(g1: f64, g2: f64, d: f64) -> f64 {
    (g1.ln() + 0.5 * d.ln() - 2f64.ln() - 0.5 * std::f64::consts::PI.ln() - 0.5 * (d - 2.0) * g2 * g2).exp()
}

fn min_val_alt(sigma: f64, eps: f64, c2: f64) -> u64 {
    let v = 12.0 * (sigma / eps).powi(2) * (2f64.ln() * 2.0 + c2.ln());
    v.ceil() as u64
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn c7_theory_evaluators() {
    let mut rng = RngSeed(7).rng();
    let mut worst = [0.0f64; 4];
    let mut int_mismatch = 0;
    for _ in 0..100 {
        let d = rng.random_range(1..=50) as f64;
        let n = d * rng.random_range(1.0..1e6);
        worst[0] = worst[0].max(rel(rademacher_vc(n, d).unwrap(), rademacher_alt(n, d)));

        let k = rng.random_range(1..=6);
        let rounds: Vec<RoundInput> = (0..k)
            .map(|_| RoundInput {
                n_val: d * rng.random_range(1.0..1e5),
                n_auto: if rng.random_bool(0.85) { rng.random_range(d..1e5).floor() } else { 0.0 },
                val_error: rng.random_range(0.0..0.3),
            })
            .collect();
        let mut b = BoundInputs {
            d,
            delta: rng.random_range(0.001..0.5),
            p0: rng.random_range(0.05..1.0),
            rounds,
            n_total: 1e6,
            t_hat_min: 0.0,
        };
        if b.n_auto_total() < d {
            b.rounds[0].n_auto = d;
        }
        worst[1] = worst[1].max(rel(error_bound_vc(&b).unwrap(), error_bound_alt(&b)));

        let t = rng.random_range(0.0..1.0);
        let big_n = d * rng.random_range(1.0..1e9);
        let got = coverage_bound_linear(t, d, k, big_n, b.delta).unwrap();
        worst[2] = worst[2].max(rel(got, coverage_alt(t, d, k as f64, big_n, b.delta)));

        let (g1, g2) = (rng.random_range(1e-3..1.0), rng.random_range(0.0..1.0));
        let dd = rng.random_range(2..=60) as f64;
        worst[3] = worst[3].max(rel(band_probability_bound(g1, g2, dd).unwrap(), band_alt(g1, g2, dd)));

        let (s, e, c2) = (rng.random_range(0.01..2.0), rng.random_range(0.005..0.5), rng.random_range(0.3..50.0));
        if min_validation_size(s, e, c2).unwrap() != min_val_alt(s, e, c2) {
            int_mismatch += 1;
        }
    }
    let mut ok = true;
    for (name, w) in ["rademacher_vc", "error_bound_vc", "coverage_bound_linear", "band_probability_bound"]
        .iter()
        .zip(worst)
    {
        ok &= verdict(&format!("C7 {name}"), w <= 1e-10, format!("worst rel. err {w:.2e} over 100 inputs (<= 1e-10)"));
    }
    ok &= verdict(
        "C7 min_validation_size",
        int_mismatch == 0,
        format!("{int_mismatch} mismatches over 100 inputs"),
    );

    let mc = verify_error_bound_mc(&McSetup::unit_ball(5, 2000), 100).unwrap();
    ok &= verdict(
        "C7 error bound monte carlo",
        mc.violations == 0,
        format!(
            "{} violations over {} runs; {} vacuous (smallest bound {:?})",
            mc.violations, mc.trials, mc.vacuous, mc.smallest_bound
        ),
    );
    assert!(ok);
}

fn grad_check(loss: Loss, model: &LinearModel, x: &[f64], y: usize) -> f64 {
    let mut g = vec![0.0; model.params().len()];
    example_gradient(loss, model, x, y, &mut g);
    let h = 1e-6;
    let mut fd = vec![0.0; g.len()];
    for (i, f) in fd.iter_mut().enumerate() {
        let mut plus = model.clone();
        plus.params_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut()[i] -= h;
        *f = (example_loss(loss, &plus, x, y) - example_loss(loss, &minus, x, y)) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn c8_gradient_check() {
    let mut rng = RngSeed(8).rng();
    let d = 6;
    let vec = |r: &mut TbalRng, n: usize| (0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let mut worst = [0.0f64; 2];
    let mut hinge_checked = 0;
    while hinge_checked < 10 {
        let w = vec(&mut rng, d);
        let m = LinearModel::binary(&w, rng.random_range(-0.5..0.5));
        let x = vec(&mut rng, d);
        let y = rng.random_range(0..2);
        let sign = if y == 1 { 1.0 } else { -1.0 };
        // stay clear of the kink at margin 1
        if (1.0 - sign * m.decision(&x).unwrap()).abs() < 1e-3 {
            continue;
        }
        worst[0] = worst[0].max(grad_check(Loss::Hinge, &m, &x, y));
        hinge_checked += 1;
    }
    for _ in 0..10 {
        let rows: Vec<Vec<f64>> = (0..4).map(|_| vec(&mut rng, d)).collect();
        let m = LinearModel::multiclass(&rows, &vec(&mut rng, 4));
        let x = vec(&mut rng, d);
        worst[1] = worst[1].max(grad_check(Loss::Logistic, &m, &x, rng.random_range(0..4)));
    }
    let mut ok = true;
    for (name, w) in ["hinge", "logistic"].iter().zip(worst) {
        ok &= verdict(&format!("C8 {name} gradient"), w <= 1e-4, format!("worst rel. err {w:.2e} at 10 points (<= 1e-4)"));
    }
    assert!(ok);
}
