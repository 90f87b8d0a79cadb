//! `drq`: run campaigns, aggregate their statistics, and poke at the solver
//! and network code from the shell.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drq::dro::{compute_offset_with_radius, TdSampleSet, WassersteinConfig};
use drq::harness::{compute_stats, run_experiment, ExperimentConfig, HarnessError};
use drq::nn::{LayerSpec, Mlp};

#[derive(Parser)]
#[command(name = "drq", version, about = "Distributionally robust safe Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of runs executed in parallel.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate the episode CSVs of an output directory.
    Stats {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the constraint offset for a file of TD-error samples.
    DroSolve {
        /// Numbers separated by whitespace, commas, or newlines.
        #[arg(long)]
        samples: PathBuf,
        /// Use this Wasserstein radius instead of the sample-size formula.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        sigma_max: Option<f64>,
        #[arg(long)]
        support: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Compare network gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

fn cmd_run(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| config_error("no output directory: pass --out or set output_dir"))?;
    cfg.validate()?;
    let report = run_experiment(&cfg, &out)?;
    eprintln!(
        "{} runs x {} episodes ({}) written to {} in {:.1} s",
        cfg.runs,
        cfg.episodes,
        cfg.algorithm,
        out.display(),
        report.wall_seconds
    );
    print_stats(&report.stats)
}

fn print_stats(stats: &drq::harness::SafetyStats) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(stats).map_err(|e| runtime_error(e.to_string()))?;
    emit(&text)
}

/// Writes to stdout; a closed pipe (`drq stats | head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime_error(e.to_string())),
        _ => Ok(()),
    }
}

fn parse_samples(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| config_error(format!("not a number: {t:?}")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_dro_solve(
    samples: PathBuf,
    epsilon: Option<f64>,
    beta: Option<f64>,
    eta: Option<f64>,
    sigma_max: Option<f64>,
    support: Option<f64>,
    tolerance: Option<f64>,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&samples)
        .map_err(|e| config_error(format!("cannot read {}: {e}", samples.display())))?;
    let set = TdSampleSet::new(parse_samples(&text)?).map_err(|e| config_error(e.to_string()))?;
    let d = WassersteinConfig::default();
    let cfg = WassersteinConfig {
        support_diameter: support.unwrap_or(d.support_diameter),
        beta: beta.unwrap_or(d.beta),
        eta: eta.unwrap_or(d.eta),
        sigma_max: sigma_max.unwrap_or(d.sigma_max),
        tolerance: tolerance.unwrap_or(d.tolerance),
    };
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let eps = match epsilon {
        Some(e) => e,
        None => drq::dro::epsilon_radius(set.len(), &cfg).map_err(|e| config_error(e.to_string()))?,
    };
    let offset = compute_offset_with_radius(&set, eps, &cfg).map_err(|e| config_error(e.to_string()))?;
    let text = serde_json::to_string_pretty(&offset).map_err(|e| runtime_error(e.to_string()))?;
    emit(&text)
}

fn cmd_gradcheck(seed: u64, trials: usize) -> Result<(), Failure> {
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for trial in 0..trials {
        let input = rng.gen_range(1..5);
        let depth = rng.gen_range(1..4);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..8)).collect();
        let spec = LayerSpec::with_hidden(input, &hidden).map_err(|e| runtime_error(e.to_string()))?;
        let mut net = Mlp::new(spec, 2.0, rng.gen());
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = rng.gen_range(-2.0..2.0);
        let grad = net.gradient(&x, target).map_err(|e| runtime_error(e.to_string()))?;
        let mut trial_worst = 0.0f64;
        for k in 0..grad.len() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + STEP;
            let up = (net.forward(&x).unwrap() - target).powi(2);
            net.params_mut()[k] = orig - STEP;
            let down = (net.forward(&x).unwrap() - target).powi(2);
            net.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-7);
            trial_worst = trial_worst.max(rel);
        }
        if trial_worst > TOL {
            failures += 1;
            eprintln!("trial {trial}: relative error {trial_worst:.3e} ({})", net.spec());
        }
        worst = worst.max(trial_worst);
    }
    println!("{trials} trials, {failures} failed, worst relative error {worst:.3e}");
    if failures > 0 {
        return Err(runtime_error(format!("{failures} gradient checks exceeded {TOL:e}")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => cmd_run(config, out, seed, workers),
        Command::Stats { out } => compute_stats(&out).map_err(Failure::from).and_then(|s| print_stats(&s)),
        Command::DroSolve {
            samples,
            epsilon,
            beta,
            eta,
            sigma_max,
            support,
            tolerance,
        } => cmd_dro_solve(samples, epsilon, beta, eta, sigma_max, support, tolerance),
        Command::Gradcheck { seed, trials } => cmd_gradcheck(seed, trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
