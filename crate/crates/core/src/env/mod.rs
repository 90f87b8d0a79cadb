//! Episodic environments with scalar inequality constraints `g_i(s, a) ≤ 0`.

mod battery;
mod scripted;

pub use battery::{
    ecm_step, ActionGrid, BatteryEnv, EcmParams, EcmState, EcmStep, OcvTable, STANDIN_OCV_CSV,
};
pub use scripted::ScriptedMdp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action index {index} out of range for {len} actions")]
    ActionOutOfRange { index: usize, len: usize },
    #[error("current {current} A outside [{min}, {max}] A")]
    CurrentOutOfBounds { current: f64, min: f64, max: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("OCV table: {0}")]
    Ocv(String),
    #[error("episode already finished; call reset")]
    EpisodeFinished,
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What one environment step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Raw constraint values; positive means violated.
    pub constraints: Vec<f64>,
    pub terminal: bool,
}

/// A finite-horizon environment with a discrete action grid.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Physical value of each discrete action, in ascending order.
    fn action_values(&self) -> &[f64];
    /// Nominal `(low, high)` range of each state component, for input scaling.
    fn state_bounds(&self) -> Vec<(f64, f64)>;
    fn horizon(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;

    fn num_actions(&self) -> usize {
        self.action_values().len()
    }
}
