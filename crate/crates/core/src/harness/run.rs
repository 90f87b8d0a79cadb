//! Campaign execution.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{compute_stats, run_prefix, Algorithm, ExperimentConfig, HarnessError, SafetyStats};
use crate::agent::{
    evaluate_greedy, mix_seed, run_episode, AgentError, DqnAgent, DrqAgent, EpisodeLog, FitReport,
    Learner, ReplayStore, StateActionEncoder,
};
use crate::env::{BatteryEnv, Environment, OcvTable};

/// In-memory contents of one run's output files.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run: usize,
    pub steps_csv: Vec<u8>,
    pub episodes_csv: Vec<u8>,
    pub fits_csv: Vec<u8>,
    pub episode_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct RunTiming {
    run: usize,
    episode_seconds: Vec<f64>,
    mean_seconds: f64,
}

/// What [`run_experiment`] returns besides the files it writes.
#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub stats: SafetyStats,
    pub wall_seconds: f64,
}

struct Writers {
    steps: csv::Writer<Vec<u8>>,
    episodes: csv::Writer<Vec<u8>>,
    fits: csv::Writer<Vec<u8>>,
}

impl Writers {
    fn new(algorithm: Algorithm, constraints: usize) -> Result<Self, HarnessError> {
        let mut steps = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "run", "episode", "phase", "step", "mode", "action", "current", "soc", "v_rc", "voltage",
            "reward",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..constraints).map(|i| format!("g_{i}")));
        if algorithm == Algorithm::Drq {
            header.extend((0..constraints).map(|i| format!("c_{i}")));
        }
        header.extend(["feasible_count", "in_feasible_set"].map(String::from));
        steps.write_record(&header)?;

        let mut episodes = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "run",
            "algorithm",
            "episode",
            "phase",
            "return",
            "cumulative_violation",
            "max_violation",
            "violated",
            "violating_steps",
            "steps",
            "explored_steps",
            "fallback_steps",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        if algorithm == Algorithm::Drq {
            header.extend((0..constraints).map(|i| format!("q_{i}")));
        }
        episodes.write_record(&header)?;

        let mut fits = csv::Writer::from_writer(Vec::new());
        match algorithm {
            Algorithm::Drq => fits.write_record([
                "run", "episode", "fit", "constraint", "ell", "epsilon", "mu", "std_dev", "sigma",
                "infeasible", "degenerate", "q_prev", "q", "d_loss", "q_loss",
            ])?,
            Algorithm::Dqn => fits.write_record(["run", "episode", "fit", "q_loss"])?,
        }
        Ok(Self {
            steps,
            episodes,
            fits,
        })
    }

    fn finish(self) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), HarnessError> {
        let take = |w: csv::Writer<Vec<u8>>| {
            w.into_inner()
                .map_err(|e| HarnessError::Stats(format!("flushing csv buffer: {e}")))
        };
        Ok((take(self.steps)?, take(self.episodes)?, take(self.fits)?))
    }
}

fn write_episode(
    w: &mut Writers,
    run: usize,
    algorithm: Algorithm,
    episode: usize,
    phase: &str,
    log: &EpisodeLog,
    env: &BatteryEnv,
    offsets: &[f64],
) -> Result<(), HarnessError> {
    let v_limit = env.params().v_limit;
    for s in &log.steps {
        let mut row = vec![
            run.to_string(),
            episode.to_string(),
            phase.to_string(),
            s.t.to_string(),
            s.decision.mode().to_string(),
            s.action.to_string(),
            s.action_value.to_string(),
            s.state[0].to_string(),
            s.state[1].to_string(),
            (s.constraints[0] + v_limit).to_string(),
            s.reward.to_string(),
        ];
        row.extend(s.constraints.iter().map(f64::to_string));
        row.extend(s.costs.iter().map(f64::to_string));
        row.push(s.decision.feasible_count.to_string());
        row.push(s.decision.in_feasible_set.to_string());
        w.steps.write_record(&row)?;
    }
    let mut row = vec![
        run.to_string(),
        algorithm.to_string(),
        episode.to_string(),
        phase.to_string(),
        log.total_reward().to_string(),
        log.cumulative_violation().to_string(),
        log.max_violation().max(0.0).to_string(),
        log.violated().to_string(),
        log.violating_steps().to_string(),
        log.steps.len().to_string(),
        log.steps.iter().filter(|s| s.decision.explored).count().to_string(),
        log.steps.iter().filter(|s| s.decision.fallback).count().to_string(),
    ];
    if algorithm == Algorithm::Drq {
        row.extend(offsets.iter().map(f64::to_string));
    }
    w.episodes.write_record(&row)?;
    Ok(())
}

fn write_fits(
    w: &mut Writers,
    run: usize,
    algorithm: Algorithm,
    episode: usize,
    fit_base: usize,
    fits: &[FitReport],
) -> Result<(), HarnessError> {
    for (k, f) in fits.iter().enumerate() {
        let fit = (fit_base + k).to_string();
        match algorithm {
            Algorithm::Drq => {
                for (i, c) in f.constraints.iter().enumerate() {
                    let o = &c.offset;
                    w.fits.write_record([
                        run.to_string(),
                        episode.to_string(),
                        fit.clone(),
                        i.to_string(),
                        o.ell.to_string(),
                        o.epsilon.to_string(),
                        o.mean.to_string(),
                        o.std_dev.to_string(),
                        o.sigma.to_string(),
                        o.infeasible.to_string(),
                        o.degenerate.to_string(),
                        c.q_prev.to_string(),
                        o.q.to_string(),
                        c.d_loss.to_string(),
                        f.q_loss.to_string(),
                    ])?;
                }
            }
            Algorithm::Dqn => w.fits.write_record([
                run.to_string(),
                episode.to_string(),
                fit,
                f.q_loss.to_string(),
            ])?,
        }
    }
    Ok(())
}

fn drive<L: Learner>(
    agent: &mut L,
    env: &mut BatteryEnv,
    cfg: &ExperimentConfig,
    run: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RunArtifacts, HarnessError> {
    let mut w = Writers::new(cfg.algorithm, env.num_constraints())?;
    let mut store = ReplayStore::new();
    let episode_cfg = cfg.episode_config();
    let mut seconds = Vec::with_capacity(cfg.episodes);
    let mut fit_count = 0;
    let wrap = |source: AgentError| HarnessError::Run { run, source };
    for episode in 1..=cfg.episodes {
        let offsets_before = agent.offsets();
        let start = Instant::now();
        let log = run_episode(agent, env, &mut store, &episode_cfg, rng).map_err(wrap)?;
        seconds.push(start.elapsed().as_secs_f64());
        write_episode(&mut w, run, cfg.algorithm, episode, "exploration", &log, env, &offsets_before)?;
        write_fits(&mut w, run, cfg.algorithm, episode, fit_count, &log.fits)?;
        fit_count += log.fits.len();

        let greedy = evaluate_greedy(agent, env).map_err(wrap)?;
        write_episode(&mut w, run, cfg.algorithm, episode, "greedy", &greedy, env, &agent.offsets())?;
    }
    let (steps_csv, episodes_csv, fits_csv) = w.finish()?;
    Ok(RunArtifacts {
        run,
        steps_csv,
        episodes_csv,
        fits_csv,
        episode_seconds: seconds,
    })
}

/// Executes one run entirely in memory.
pub fn run_single(
    cfg: &ExperimentConfig,
    ocv: &OcvTable,
    run: usize,
) -> Result<RunArtifacts, HarnessError> {
    let run_seed = mix_seed(cfg.master_seed, run as u64);
    let mut env = cfg.build_env(ocv.clone())?;
    let encoder = StateActionEncoder::for_env(&env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(run_seed, 2));
    let agent_seed = mix_seed(run_seed, 1);
    match cfg.algorithm {
        Algorithm::Drq => {
            let mut agent =
                DrqAgent::new(encoder, env.num_constraints(), cfg.drq_config(), agent_seed)?;
            drive(&mut agent, &mut env, cfg, run, &mut rng)
        }
        Algorithm::Dqn => {
            let mut agent = DqnAgent::new(encoder, cfg.dqn_config(), agent_seed)?;
            drive(&mut agent, &mut env, cfg, run, &mut rng)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Runs every configured run (in parallel up to the worker count), writes
/// the per-run files, then aggregates the directory into `summary.json`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<CampaignReport, HarnessError> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let ocv = cfg.ocv_table()?;
    cfg.build_env(ocv.clone())?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let config_text =
        toml::to_string(cfg).map_err(|e| HarnessError::Config(format!("serializing config: {e}")))?;
    write_file(&out_dir.join("config.toml"), config_text.as_bytes())?;

    let start = Instant::now();
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(cfg.runs);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunArtifacts, HarnessError>>>> =
        Mutex::new((0..cfg.runs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let run = next.fetch_add(1, Ordering::Relaxed);
                if run >= cfg.runs {
                    break;
                }
                let out = run_single(cfg, &ocv, run);
                results.lock().expect("no worker panicked")[run] = Some(out);
            });
        }
    });

    let mut timings = Vec::with_capacity(cfg.runs);
    for result in results.into_inner().expect("no worker panicked") {
        let art = result.expect("every run index was claimed")?;
        let prefix = run_prefix(art.run);
        write_file(&out_dir.join(format!("{prefix}_steps.csv")), &art.steps_csv)?;
        write_file(&out_dir.join(format!("{prefix}_episodes.csv")), &art.episodes_csv)?;
        write_file(&out_dir.join(format!("{prefix}_fits.csv")), &art.fits_csv)?;
        let mean_seconds = art.episode_seconds.iter().sum::<f64>() / art.episode_seconds.len() as f64;
        timings.push(RunTiming {
            run: art.run,
            episode_seconds: art.episode_seconds,
            mean_seconds,
        });
    }
    write_file(
        &out_dir.join("timings.json"),
        serde_json::to_string_pretty(&timings)?.as_bytes(),
    )?;

    let stats = compute_stats(out_dir)?;
    write_file(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&stats)?.as_bytes(),
    )?;
    Ok(CampaignReport {
        stats,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
