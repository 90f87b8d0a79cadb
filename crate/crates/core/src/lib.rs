//! Safe deep Q-learning for constrained MDPs with distributionally robust
//! constraint tightening.
//!
//! Constraint Q-functions `D_i` estimate cumulative violation of `g_i ≤ 0`.
//! Their TD errors feed a Wasserstein chance-constraint reformulation
//! ([`dro`]) that yields an offset `q_i`; the offset sinks the constraint
//! boundary into the safe region when costs are recomputed, and actions are
//! restricted to those whose `D_i` are non-positive ([`agent`]).
//!
//! [`env`] holds the battery fast-charging plant, [`harness`] runs seeded
//! campaigns and aggregates safety statistics.

pub mod agent;
pub mod dro;
pub mod env;
pub mod harness;
pub mod nn;
