//! Safety and performance statistics, computed only from episode CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// The columns of an episode CSV row that statistics use. Extra columns are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub run: usize,
    pub algorithm: String,
    pub episode: usize,
    pub phase: String,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub cumulative_violation: f64,
    pub max_violation: f64,
    pub violated: bool,
    pub violating_steps: usize,
    pub steps: usize,
}

/// Violation counts over the episodes of one phase, each run's first episode excluded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub episodes: usize,
    pub violating_episodes: usize,
    pub episode_violation_fraction: f64,
    pub steps: usize,
    pub violating_steps: usize,
    pub timestep_violation_fraction: f64,
}

/// Greedy return of one episode index across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub episode: usize,
    pub runs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmStats {
    pub algorithm: String,
    pub runs: usize,
    pub exploration: PhaseStats,
    pub greedy: PhaseStats,
    pub greedy_returns: Vec<ReturnStats>,
    /// Mean greedy return of the last episode across runs.
    pub final_greedy_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyStats {
    pub algorithms: Vec<AlgorithmStats>,
}

impl SafetyStats {
    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmStats> {
        self.algorithms.iter().find(|a| a.algorithm == name)
    }
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn phase_stats<'a>(rows: impl Iterator<Item = &'a EpisodeRow>) -> PhaseStats {
    let mut s = PhaseStats::default();
    for r in rows.filter(|r| r.episode >= 2) {
        s.episodes += 1;
        s.violating_episodes += usize::from(r.violated);
        s.steps += r.steps;
        s.violating_steps += r.violating_steps;
    }
    s.episode_violation_fraction = fraction(s.violating_episodes, s.episodes);
    s.timestep_violation_fraction = fraction(s.violating_steps, s.steps);
    s
}

/// Aggregates rows already grouped by algorithm.
pub fn aggregate(algorithm: &str, rows: &[EpisodeRow]) -> AlgorithmStats {
    let mut runs: Vec<usize> = rows.iter().map(|r| r.run).collect();
    runs.sort_unstable();
    runs.dedup();
    let exploration = phase_stats(rows.iter().filter(|r| r.phase == "exploration"));
    let greedy = phase_stats(rows.iter().filter(|r| r.phase == "greedy"));

    let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.phase == "greedy") {
        by_episode.entry(r.episode).or_default().push(r.total_return);
    }
    let greedy_returns: Vec<ReturnStats> = by_episode
        .into_iter()
        .map(|(episode, v)| ReturnStats {
            episode,
            runs: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let final_greedy_mean = greedy_returns.last().map_or(f64::NAN, |r| r.mean);
    AlgorithmStats {
        algorithm: algorithm.to_string(),
        runs: runs.len(),
        exploration,
        greedy,
        greedy_returns,
        final_greedy_mean,
    }
}

fn episode_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with("_episodes.csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every `run_*_episodes.csv` in `dir` and aggregates per algorithm
/// (in name order).
pub fn compute_stats(dir: impl AsRef<Path>) -> Result<SafetyStats, HarnessError> {
    let dir = dir.as_ref();
    let files = episode_files(dir)?;
    if files.is_empty() {
        return Err(HarnessError::Stats(format!(
            "no run_*_episodes.csv files in {}",
            dir.display()
        )));
    }
    let mut grouped: BTreeMap<String, Vec<EpisodeRow>> = BTreeMap::new();
    for path in files {
        let mut reader = csv::Reader::from_path(&path)?;
        for row in reader.deserialize() {
            let row: EpisodeRow = row.map_err(|e| {
                HarnessError::Stats(format!("{}: {e}", path.display()))
            })?;
            if row.phase != "exploration" && row.phase != "greedy" {
                return Err(HarnessError::Stats(format!(
                    "{}: unknown phase {:?}",
                    path.display(),
                    row.phase
                )));
            }
            grouped.entry(row.algorithm.clone()).or_default().push(row);
        }
    }
    Ok(SafetyStats {
        algorithms: grouped
            .iter()
            .map(|(name, rows)| aggregate(name, rows))
            .collect(),
    })
}
