use super::{EnvError, Environment, StepOutcome};

/// Deterministic two-state, three-action MDP used to exercise the agent on a
/// problem whose constraint values are known exactly.
///
/// Action `a` moves state `s` to `(s + a) % 2`. Rewards favor action 2.
#[derive(Debug, Clone)]
pub struct ScriptedMdp {
    g: [[f64; 3]; 2],
    horizon: usize,
    state: usize,
    t: usize,
}

const ACTIONS: [f64; 3] = [0.0, 1.0, 2.0];

impl ScriptedMdp {
    pub fn new(g: [[f64; 3]; 2], horizon: usize) -> Self {
        Self {
            g,
            horizon,
            state: 0,
            t: 0,
        }
    }

    /// Every constraint value is deep inside the safe region except one
    /// pair that only registers a cost under the initial offset.
    pub fn deep_safe(horizon: usize) -> Self {
        Self::new([[-1.0, -0.8, -0.5], [-0.9, -0.6, -0.15]], horizon)
    }

    pub fn constraint(&self, state: usize, action: usize) -> f64 {
        self.g[state][action]
    }
}

impl Environment for ScriptedMdp {
    fn state_dim(&self) -> usize {
        1
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn action_values(&self) -> &[f64] {
        &ACTIONS
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = 0;
        self.t = 0;
        vec![0.0]
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if action >= ACTIONS.len() {
            return Err(EnvError::ActionOutOfRange {
                index: action,
                len: ACTIONS.len(),
            });
        }
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let g = self.g[self.state][action];
        let reward = 0.1 * action as f64 - 0.05 * self.state as f64;
        self.state = (self.state + action) % 2;
        self.t += 1;
        Ok(StepOutcome {
            next_state: vec![self.state as f64],
            reward,
            constraints: vec![g],
            terminal: self.t == self.horizon,
        })
    }
}
