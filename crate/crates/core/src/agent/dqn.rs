//! Penalty-shaped DQN baseline: one network on `r − κ·#(g_i > 0)`, greedy over the full grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    mix_seed, unmasked_decision, AgentError, Decision, FitReport, Learner, ReplayStore,
    StateActionEncoder, TransitionRecord,
};
use crate::nn::{Dataset, LayerSpec, Mlp, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub explore_prob: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Subtracted once per violated constraint.
    pub violation_penalty: f64,
    /// Bellman backups per refit.
    pub sweeps: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            explore_prob: 0.2,
            hidden: vec![10, 10],
            train: TrainConfig::default(),
            violation_penalty: 1.0,
            sweeps: 1,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(AgentError::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.explore_prob) {
            return Err(AgentError::InvalidConfig(format!(
                "exploration probability must lie in [0, 1], got {}",
                self.explore_prob
            )));
        }
        if !(self.violation_penalty.is_finite() && self.violation_penalty >= 0.0) {
            return Err(AgentError::InvalidConfig("violation penalty must be finite and non-negative".into()));
        }
        if self.sweeps == 0 {
            return Err(AgentError::InvalidConfig("sweeps must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

pub fn engineered_reward(rec: &TransitionRecord, penalty: f64) -> f64 {
    let violated = rec.constraints.iter().filter(|&&g| g > 0.0).count();
    rec.reward - penalty * violated as f64
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    cfg: DqnConfig,
    encoder: StateActionEncoder,
    net: Mlp,
    seed: u64,
    fits: u64,
}

impl DqnAgent {
    pub fn new(encoder: StateActionEncoder, cfg: DqnConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let net = Mlp::new(
            LayerSpec::with_hidden(encoder.input_width(), &cfg.hidden)?,
            cfg.train.init_scale,
            mix_seed(seed, 0),
        );
        Ok(Self {
            cfg,
            encoder,
            net,
            seed,
            fits: 0,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.cfg
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn target(&self, rec: &TransitionRecord) -> f64 {
        let r = engineered_reward(rec, self.cfg.violation_penalty);
        if rec.terminal {
            return r;
        }
        let q = self.encoder.evaluate_all(&self.net, &rec.next_state);
        r + self.cfg.gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn refit(&mut self, store: &ReplayStore) -> Result<FitReport, AgentError> {
        if store.is_empty() {
            return Err(AgentError::EmptyStore);
        }
        let fit_seed = mix_seed(self.seed ^ self.cfg.train.seed, 1000 + self.fits);
        let mut q_loss = f64::NAN;
        for sweep in 0..self.cfg.sweeps {
            let mut data = Dataset::new(self.encoder.input_width());
            let mut buf = Vec::with_capacity(self.encoder.input_width());
            for rec in store.records() {
                let t = self.target(rec);
                self.encoder.encode_into(&rec.state, rec.action, &mut buf);
                data.push(&buf, t)?;
            }
            let train = TrainConfig {
                seed: mix_seed(mix_seed(fit_seed, sweep as u64), 0),
                ..self.cfg.train.clone()
            };
            q_loss = self.net.fit(&data, &train)?.final_loss();
        }
        self.fits += 1;
        Ok(FitReport {
            constraints: Vec::new(),
            q_loss,
        })
    }
}

impl Learner for DqnAgent {
    fn explore_prob(&self) -> f64 {
        self.cfg.explore_prob
    }

    fn decide<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Decision {
        let q = self.encoder.evaluate_all(&self.net, state);
        unmasked_decision(&q, explore, rng)
    }

    fn learn(&mut self, store: &ReplayStore) -> Result<FitReport, AgentError> {
        self.refit(store)
    }

    fn offsets(&self) -> Vec<f64> {
        Vec::new()
    }

    fn is_warm(&self) -> bool {
        self.fits > 0
    }

    fn fingerprint(&self) -> u64 {
        self.net.fingerprint()
    }
}
