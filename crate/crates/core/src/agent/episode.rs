//! Episode loop shared by both agents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{constraint_cost, AgentError, Decision, FitReport, Learner, ReplayStore, TransitionRecord};
use crate::env::Environment;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Refit after every step once the first episode is over.
    pub fit_per_step: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub action_value: f64,
    pub reward: f64,
    pub constraints: Vec<f64>,
    /// Costs under the offsets in force when the step was taken.
    pub costs: Vec<f64>,
    pub decision: Decision,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<StepLog>,
    pub fits: Vec<FitReport>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Sum over steps and constraints of the positive part of `g`.
    pub fn cumulative_violation(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.constraints.iter())
            .map(|&g| g.max(0.0))
            .sum()
    }

    pub fn max_violation(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.constraints.iter())
            .fold(f64::NEG_INFINITY, |m, &g| m.max(g))
    }

    pub fn violating_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.constraints.iter().any(|&g| g > 0.0))
            .count()
    }

    pub fn violated(&self) -> bool {
        self.violating_steps() > 0
    }
}

fn log_step(
    t: usize,
    state: Vec<f64>,
    decision: Decision,
    action_value: f64,
    reward: f64,
    constraints: &[f64],
    offsets: &[f64],
    terminal: bool,
) -> StepLog {
    let costs = constraints
        .iter()
        .zip(offsets)
        .map(|(&g, &q)| constraint_cost(g, q))
        .collect();
    StepLog {
        t,
        state,
        action: decision.action,
        action_value,
        reward,
        constraints: constraints.to_vec(),
        costs,
        decision,
        terminal,
    }
}

/// One exploratory episode: act, store, learn.
pub fn run_episode<L, E, R>(
    agent: &mut L,
    env: &mut E,
    store: &mut ReplayStore,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<EpisodeLog, AgentError>
where
    L: Learner,
    E: Environment,
    R: Rng + ?Sized,
{
    let mut log = EpisodeLog::default();
    let mut state = env.reset();
    let per_step = cfg.fit_per_step && agent.is_warm();
    for t in 0..env.horizon() {
        let explore = rng.gen::<f64>() < agent.explore_prob();
        let decision = agent.decide(&state, explore, rng);
        let out = env.step(decision.action)?;
        let offsets = agent.offsets();
        log.steps.push(log_step(
            t,
            state.clone(),
            decision,
            env.action_values()[decision.action],
            out.reward,
            &out.constraints,
            &offsets,
            out.terminal,
        ));
        store.push(TransitionRecord {
            state: std::mem::take(&mut state),
            action: decision.action,
            next_state: out.next_state.clone(),
            reward: out.reward,
            constraints: out.constraints,
            terminal: out.terminal,
        });
        state = out.next_state;
        if per_step {
            log.fits.push(agent.learn(store)?);
        }
        if out.terminal {
            break;
        }
    }
    if !per_step {
        log.fits.push(agent.learn(store)?);
    }
    Ok(log)
}

/// Greedy rollout with no exploration, storage, or learning.
pub fn evaluate_greedy<L, E>(agent: &L, env: &mut E) -> Result<EpisodeLog, AgentError>
where
    L: Learner,
    E: Environment,
{
    // Greedy decisions never touch the rng.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut log = EpisodeLog::default();
    let mut state = env.reset();
    let offsets = agent.offsets();
    for t in 0..env.horizon() {
        let decision = agent.decide(&state, false, &mut rng);
        let out = env.step(decision.action)?;
        log.steps.push(log_step(
            t,
            std::mem::replace(&mut state, out.next_state),
            decision,
            env.action_values()[decision.action],
            out.reward,
            &out.constraints,
            &offsets,
            out.terminal,
        ));
        if out.terminal {
            break;
        }
    }
    Ok(log)
}
