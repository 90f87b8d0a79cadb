//! Experiment configuration, read from TOML with dotted section keys.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{DqnConfig, DrqConfig, EpisodeConfig};
use crate::dro::WassersteinConfig;
use crate::env::{ActionGrid, BatteryEnv, EcmParams, OcvTable};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Drq,
    Dqn,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Drq => "drq",
            Algorithm::Dqn => "dqn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrqSection {
    pub q_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub feasibility_tolerance: f64,
    pub initial_offset: Option<f64>,
}

impl Default for DrqSection {
    fn default() -> Self {
        let d = DrqConfig::default();
        Self {
            q_hidden: d.q_hidden,
            d_hidden: d.d_hidden,
            feasibility_tolerance: d.feasibility_tolerance,
            initial_offset: d.initial_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnSection {
    pub hidden: Vec<usize>,
    pub violation_penalty: f64,
}

impl Default for DqnSection {
    fn default() -> Self {
        let d = DqnConfig::default();
        Self {
            hidden: d.hidden,
            violation_penalty: d.violation_penalty,
        }
    }
}

/// Training settings per network role. The baseline uses `q`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub q: TrainConfig,
    pub d: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub episodes: usize,
    pub master_seed: u64,
    /// Parallel runs; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub horizon: usize,
    pub gamma: f64,
    pub explore_prob: f64,
    pub fit_per_step: bool,
    /// Bellman backups per refit, for every network.
    pub sweeps: usize,
    /// Number of evenly spaced currents over `[i_min, i_max]`.
    pub action_levels: usize,
    /// OCV table file; the bundled stand-in curve when absent.
    pub ocv_file: Option<PathBuf>,
    pub battery: EcmParams,
    pub dro: WassersteinConfig,
    pub drq: DrqSection,
    pub dqn: DqnSection,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Drq,
            runs: 10,
            episodes: 25,
            master_seed: 0,
            workers: None,
            output_dir: None,
            horizon: 140,
            gamma: 0.5,
            explore_prob: 0.2,
            fit_per_step: false,
            sweeps: 1,
            action_levels: 24,
            ocv_file: None,
            battery: EcmParams::default(),
            dro: WassersteinConfig::default(),
            drq: DrqSection::default(),
            dqn: DqnSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative `ocv_file` is resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(ocv), Some(dir)) = (&cfg.ocv_file, path.parent()) {
            if ocv.is_relative() {
                cfg.ocv_file = Some(dir.join(ocv));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.action_levels < 2 {
            return bad("action_levels must be at least 2".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.battery
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match self.algorithm {
            Algorithm::Drq => self.drq_config().validate(),
            Algorithm::Dqn => self.dqn_config().validate(),
        }
        .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn drq_config(&self) -> DrqConfig {
        DrqConfig {
            gamma: self.gamma,
            explore_prob: self.explore_prob,
            q_hidden: self.drq.q_hidden.clone(),
            d_hidden: self.drq.d_hidden.clone(),
            q_train: self.train.q.clone(),
            d_train: self.train.d.clone(),
            dro: self.dro.clone(),
            initial_offset: self.drq.initial_offset,
            feasibility_tolerance: self.drq.feasibility_tolerance,
            sweeps: self.sweeps,
        }
    }

    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            gamma: self.gamma,
            explore_prob: self.explore_prob,
            hidden: self.dqn.hidden.clone(),
            train: self.train.q.clone(),
            violation_penalty: self.dqn.violation_penalty,
            sweeps: self.sweeps,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            fit_per_step: self.fit_per_step,
        }
    }

    pub fn ocv_table(&self) -> Result<OcvTable, HarnessError> {
        match &self.ocv_file {
            Some(path) => OcvTable::load(path).map_err(|e| HarnessError::Config(e.to_string())),
            None => Ok(OcvTable::standin()),
        }
    }

    pub fn build_env(&self, ocv: OcvTable) -> Result<BatteryEnv, HarnessError> {
        let grid = ActionGrid::uniform(self.battery.i_min, self.battery.i_max, self.action_levels)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        BatteryEnv::new(self.battery.clone(), ocv, grid, self.horizon)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.q.learning_rate, 0.15);
        assert_eq!(cfg.dro.beta, 0.98);
        cfg.validate().unwrap();
    }

    #[test]
    fn dotted_keys_override() {
        let cfg = ExperimentConfig::parse(
            "algorithm = \"dqn\"\nruns = 2\nbattery.soc0 = 0.3\ntrain.q.epochs = 7\ndro.eta = 0.05\n",
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Dqn);
        assert_eq!(cfg.runs, 2);
        assert_eq!(cfg.battery.soc0, 0.3);
        assert_eq!(cfg.train.q.epochs, 7);
        assert_eq!(cfg.dro.eta, 0.05);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(ExperimentConfig::parse("rnus = 3").is_err());
        assert!(ExperimentConfig::parse("battery.capacty = 3").is_err());
        let cfg = ExperimentConfig::parse("runs = 0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::parse("dro.beta = 1.0").unwrap();
        assert!(cfg.validate().is_err());
    }
}
