//! Value-based agents: the distributionally robust constrained learner
//! ([`DrqAgent`]) and the penalty-shaped DQN baseline ([`DqnAgent`]).
//!
//! Both agents are batch learners. Transitions accumulate in an append-only
//! [`ReplayStore`]; at the end of each episode (or each step, when configured)
//! the networks are refitted on one Bellman backup over the whole store.

mod dqn;
mod drq;
mod episode;

pub use dqn::{engineered_reward, DqnAgent, DqnConfig};
pub use drq::{
    constraint_cost, constraint_targets, feasible_set, fit_constraint_nets, fit_objective,
    DrqAgent, DrqConfig, FeasibleSet,
};
pub use episode::{evaluate_greedy, run_episode, EpisodeConfig, EpisodeLog, StepLog};

use rand::Rng;
use thiserror::Error;

use crate::dro::{DroError, DroOffset, TdSampleSet};
use crate::env::{EnvError, Environment};
use crate::nn::{Mlp, NnError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dro(#[from] DroError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("replay store is empty")]
    EmptyStore,
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

/// One environment step as stored for refitting. Constraint values are kept
/// raw so costs can be recomputed under later offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub state: Vec<f64>,
    pub action: usize,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub constraints: Vec<f64>,
    pub terminal: bool,
}

/// Append-only transition history of one run.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    records: Vec<TransitionRecord>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl FromIterator<TransitionRecord> for ReplayStore {
    fn from_iter<T: IntoIterator<Item = TransitionRecord>>(iter: T) -> Self {
        Self {
            records: iter.into_iter().collect(),
        }
    }
}

/// Min-max scaling of `(state, action)` into the network input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionEncoder {
    state_lo: Vec<f64>,
    state_span: Vec<f64>,
    actions: Vec<f64>,
}

impl StateActionEncoder {
    pub fn new(state_bounds: &[(f64, f64)], action_values: &[f64]) -> Result<Self, AgentError> {
        if action_values.is_empty() {
            return Err(AgentError::InvalidConfig("no actions".into()));
        }
        let mut state_lo = Vec::with_capacity(state_bounds.len());
        let mut state_span = Vec::with_capacity(state_bounds.len());
        for &(lo, hi) in state_bounds {
            if !(hi > lo) {
                return Err(AgentError::InvalidConfig(format!("empty state range [{lo}, {hi}]")));
            }
            state_lo.push(lo);
            state_span.push(hi - lo);
        }
        let a_lo = action_values[0];
        let a_hi = action_values[action_values.len() - 1];
        let actions = if a_hi > a_lo {
            action_values.iter().map(|a| (a - a_lo) / (a_hi - a_lo)).collect()
        } else {
            vec![0.0; action_values.len()]
        };
        Ok(Self {
            state_lo,
            state_span,
            actions,
        })
    }

    pub fn for_env(env: &impl Environment) -> Result<Self, AgentError> {
        Self::new(&env.state_bounds(), env.action_values())
    }

    pub fn input_width(&self) -> usize {
        self.state_lo.len() + 1
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn encode_into(&self, state: &[f64], action: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(
            state
                .iter()
                .zip(self.state_lo.iter().zip(&self.state_span))
                .map(|(s, (lo, span))| (s - lo) / span),
        );
        buf.push(self.actions[action]);
    }

    pub fn encode(&self, state: &[f64], action: usize) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.input_width());
        self.encode_into(state, action, &mut buf);
        buf
    }

    /// Network output for every action at `state`.
    pub fn evaluate_all(&self, net: &Mlp, state: &[f64]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.input_width());
        (0..self.actions.len())
            .map(|a| {
                self.encode_into(state, a, &mut buf);
                net.forward_unchecked(&buf)
            })
            .collect()
    }
}

/// How an action was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: usize,
    pub explored: bool,
    /// Plain ε-greedy over the whole grid (before the first fit).
    pub vanilla: bool,
    /// No action met every constraint estimate; the least-violating one was forced.
    pub fallback: bool,
    pub feasible_count: usize,
    /// The action met every constraint estimate when it was chosen.
    pub in_feasible_set: bool,
}

impl Decision {
    pub fn mode(&self) -> &'static str {
        if self.vanilla {
            "vanilla"
        } else if self.fallback {
            "fallback"
        } else if self.explored {
            "explore"
        } else {
            "greedy"
        }
    }
}

/// Per-constraint part of a [`FitReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintFit {
    /// Offset used for the costs of this fit.
    pub q_prev: f64,
    /// Offset computed from the post-fit TD errors.
    pub offset: DroOffset,
    pub td_errors: TdSampleSet,
    pub d_loss: f64,
}

/// Outcome of one refit. The baseline has no constraint part.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub constraints: Vec<ConstraintFit>,
    pub q_loss: f64,
}

/// Behavior the episode loop needs from an agent.
pub trait Learner {
    fn explore_prob(&self) -> f64;
    /// `explore` is drawn by the caller; `rng` is used only to pick the exploratory action.
    fn decide<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Decision;
    fn learn(&mut self, store: &ReplayStore) -> Result<FitReport, AgentError>;
    /// Current constraint offsets; empty for agents without them.
    fn offsets(&self) -> Vec<f64>;
    /// Whether at least one fit has happened.
    fn is_warm(&self) -> bool;
    fn fingerprint(&self) -> u64;
}

/// Index of the largest value among `candidates`; ties go to the lowest index.
pub(crate) fn argmax_over(values: &[f64], candidates: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for a in candidates {
        let v = values[a];
        match best {
            Some((_, bv)) if !(v > bv) => {}
            _ => best = Some((a, v)),
        }
    }
    best.expect("non-empty candidate set").0
}

/// ε-greedy over the full grid, shared by the baseline and the first DrQ episode.
pub(crate) fn unmasked_decision<R: Rng + ?Sized>(
    q_values: &[f64],
    explore: bool,
    rng: &mut R,
) -> Decision {
    let n = q_values.len();
    let action = if explore {
        rng.gen_range(0..n)
    } else {
        argmax_over(q_values, 0..n)
    };
    Decision {
        action,
        explored: explore,
        vanilla: true,
        fallback: false,
        feasible_count: n,
        in_feasible_set: true,
    }
}

/// SplitMix64 finalizer; derives independent seeds from a base seed and a tag.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_over(&[1.0, 3.0, 3.0], 0..3), 1);
        assert_eq!(argmax_over(&[-2.0, 9.0, -1.0], [0, 2]), 2);
        assert_eq!(argmax_over(&[-1.0, 9.0, -1.0], [0, 2]), 0);
    }

    #[test]
    fn encoder_scales_to_unit_box() {
        let enc = StateActionEncoder::new(&[(0.0, 1.0), (0.0, 0.46)], &[0.0, 23.0, 46.0]).unwrap();
        assert_eq!(enc.encode(&[0.2, 0.23], 1), vec![0.2, 0.5, 0.5]);
        assert_eq!(enc.input_width(), 3);
        assert!(StateActionEncoder::new(&[(1.0, 1.0)], &[0.0]).is_err());
    }

    #[test]
    fn mode_labels() {
        let mut d = Decision {
            action: 0,
            explored: true,
            vanilla: true,
            fallback: false,
            feasible_count: 3,
            in_feasible_set: true,
        };
        assert_eq!(d.mode(), "vanilla");
        d.vanilla = false;
        assert_eq!(d.mode(), "explore");
        d.fallback = true;
        assert_eq!(d.mode(), "fallback");
        d.fallback = false;
        d.explored = false;
        assert_eq!(d.mode(), "greedy");
    }

    #[test]
    fn seeds_differ_by_tag() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
    }
}
