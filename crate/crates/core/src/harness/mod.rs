//! Seeded multi-run campaigns on the battery environment, their CSV
//! artifacts, and the safety/performance statistics computed from them.
//!
//! One output directory holds, per run `k`:
//!
//! - `run_kk_steps.csv`: every step of every exploratory and greedy episode
//! - `run_kk_episodes.csv`: one row per (episode, phase)
//! - `run_kk_fits.csv`: one row per refit (and per constraint for DrQ)
//!
//! plus `summary.json` (the [`SafetyStats`] of the directory), `config.toml`,
//! and `timings.json`. Timings are kept out of the CSVs so reruns produce
//! byte-identical CSVs.

mod config;
mod run;
mod stats;

pub use config::{Algorithm, DqnSection, DrqSection, ExperimentConfig, TrainSection};
pub use run::{run_experiment, run_single, CampaignReport, RunArtifacts};
pub use stats::{aggregate, compute_stats, AlgorithmStats, EpisodeRow, PhaseStats, ReturnStats, SafetyStats};

use std::path::PathBuf;

use thiserror::Error;

use crate::agent::AgentError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: AgentError,
    },
    #[error("statistics: {0}")]
    Stats(String),
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

/// File name prefix of run `k`.
pub fn run_prefix(run: usize) -> String {
    format!("run_{run:02}")
}
