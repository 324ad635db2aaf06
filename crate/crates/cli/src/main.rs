use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use tbal_core::engine::Method;
use tbal_core::theory::{self, BoundInputs, McSetup, RoundInput};
use tbal_core::RngSeed;
use tbal_cli::{output, sweep, CliError, ExperimentConfig, Source};

#[derive(Parser)]
#[command(name = "tbal", version, about = "Threshold-based auto-labeling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write runs.csv and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed_base`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a bound from the theory module.
    Bounds {
        #[command(subcommand)]
        which: Bound,
    },
    /// Write one trial's pool and validation split as CSV.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Trial seed; defaults to `seed_base`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one method once and write the labeled pool.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Method,
        /// Grid value to run at; defaults to the first one.
        #[arg(long)]
        axis_value: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add the feature columns.
        #[arg(long)]
        features: bool,
    },
}

#[derive(Subcommand)]
enum Bound {
    /// sqrt((2d/n) ln(e n/d)).
    Rademacher {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        d: f64,
    },
    /// Auto-labeling error bound; one `--round n_v,n_a,err` per round.
    Error {
        #[arg(long)]
        d: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        p0: f64,
        #[arg(long = "round", required = true, value_parser = parse_round)]
        rounds: Vec<RoundInput>,
    },
    /// Coverage lower bound for homogeneous linear separators.
    Coverage {
        #[arg(long)]
        t_hat_min: f64,
        #[arg(long)]
        d: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Mass bound of a band in the uniform unit ball.
    Band {
        #[arg(long)]
        gamma1: f64,
        #[arg(long)]
        gamma2: f64,
        #[arg(long)]
        d: f64,
    },
    /// Smallest validation size the lower bound allows.
    MinVal {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = std::f64::consts::E / 4.0)]
        c2: f64,
    },
    /// Compare the error bound with Unit-Ball runs.
    Mc {
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long, default_value_t = 2000)]
        val_size: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_round(s: &str) -> Result<RoundInput, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [n_val, n_auto, err] = parts[..] else {
        return Err(format!("expected n_v,n_a,err, got `{s}`"));
    };
    let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
    Ok(RoundInput {
        n_val: num(n_val)?,
        n_auto: num(n_auto)?,
        val_error: num(err)?,
    })
}

fn bounds(which: Bound) -> anyhow::Result<()> {
    let value = match which {
        Bound::Rademacher { n, d } => theory::rademacher_vc(n, d)?,
        Bound::Error { d, delta, p0, rounds } => {
            let b = BoundInputs {
                d,
                delta,
                p0,
                rounds,
                n_total: f64::NAN,
                t_hat_min: f64::NAN,
            };
            theory::error_bound_vc(&b)?
        }
        Bound::Coverage { t_hat_min, d, k, n, delta } => theory::coverage_bound_linear(t_hat_min, d, k, n, delta)?,
        Bound::Band { gamma1, gamma2, d } => theory::band_probability_bound(gamma1, gamma2, d)?,
        Bound::MinVal { sigma, epsilon, c2 } => theory::min_validation_size(sigma, epsilon, c2)? as f64,
        Bound::Mc { d, val_size, trials, seed } => {
            let setup = McSetup {
                seed: RngSeed(seed),
                ..McSetup::unit_ball(d, val_size)
            };
            let r = theory::verify_error_bound_mc(&setup, trials)?;
            println!("trials,violations,vacuous,violation_rate,allowed_rate,smallest_bound,largest_error");
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            println!(
                "{},{},{},{},{},{},{}",
                r.trials,
                r.violations,
                r.vacuous,
                r.violation_rate(),
                r.allowed_rate,
                opt(r.smallest_bound),
                opt(r.largest_error)
            );
            return Ok(());
        }
    };
    println!("{value}");
    Ok(())
}

fn load(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed_base = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let mut cfg = load(&config, seed, out)?;
            if let Some(w) = workers {
                if w == 0 {
                    return Err(CliError::Config {
                        path: config,
                        message: "--workers: must be >= 1".into(),
                    }
                    .into());
                }
                cfg.workers = w;
            }
            let res = tbal_cli::run_experiment(&cfg)?;
            eprintln!("{} runs written to {}", res.rows.len(), cfg.out.display());
            if !res.failures.is_empty() {
                for f in &res.failures {
                    eprintln!(
                        "run failed: method {} axis {} seed {}: {}",
                        f.job.method, f.job.axis_value, f.job.seed, f.error
                    );
                }
                bail!("{} of {} runs failed", res.failures.len(), res.failures.len() + res.rows.len());
            }
        }
        Command::Bounds { which } => bounds(which)?,
        Command::Gen { config, seed, out } => {
            let cfg = load(&config, seed, out)?;
            mkdir(&cfg.out)?;
            let source = Source::prepare(&cfg)?;
            let (pool, val) = source.split(&cfg, cfg.seed_base)?;
            output::write_split(&cfg.out, &pool, &val)?;
            eprintln!("wrote {} pool and {} validation points to {}", pool.len(), val.len(), cfg.out.display());
        }
        Command::Export {
            config,
            method,
            axis_value,
            seed,
            out,
            features,
        } => {
            let cfg = load(&config, seed, out)?;
            let axis_value = axis_value.unwrap_or(cfg.sweep.values[0]);
            let job = sweep::Job {
                method,
                axis_value,
                seed: cfg.seed_base,
            };
            let source = Source::prepare(&cfg)?;
            let (result, _) = sweep::run_job(&cfg, &source, job)?;
            mkdir(&cfg.out)?;
            let path = cfg.out.join(format!("dout_{}_{}_{}.csv", method, axis_value, cfg.seed_base));
            output::export_dataset(&result, &path, features)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
