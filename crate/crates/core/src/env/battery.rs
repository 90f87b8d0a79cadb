//! Equivalent-circuit lithium-ion cell under constant-interval current control.
//!
//! ```text
//! SOC'  = SOC + I·Δt / Q
//! V_RC' = V_RC - Δt/(R1·C1)·V_RC + Δt/C1·I
//! V     = OCV(SOC) + V_RC + I·R0          (pre-step state)
//! r     = -(SOC' - SOC_target)^2
//! g     = V - V_limit
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, StepOutcome};

/// Bundled open-circuit-voltage curve. It is a made-up LFP-shaped stand-in
/// (flat plateau, steep ends) placed so that the 3.6 V limit binds under
/// fast charge; it is not measured data.
pub const STANDIN_OCV_CSV: &str = include_str!("../../data/ocv_lfp_standin.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcmParams {
    /// Charge capacity in ampere-seconds.
    pub capacity: f64,
    pub r1: f64,
    pub c1: f64,
    pub r0: f64,
    /// Step length in seconds.
    pub dt: f64,
    pub v_limit: f64,
    pub i_min: f64,
    pub i_max: f64,
    pub soc0: f64,
    pub soc_target: f64,
}

impl Default for EcmParams {
    fn default() -> Self {
        Self {
            capacity: 8280.0,
            r1: 0.01,
            c1: 2500.0,
            r0: 0.01,
            dt: 2.5,
            v_limit: 3.6,
            i_min: 0.0,
            i_max: 46.0,
            soc0: 0.2,
            soc_target: 0.7,
        }
    }
}

impl EcmParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("capacity", self.capacity),
            ("r1", self.r1),
            ("c1", self.c1),
            ("r0", self.r0),
            ("dt", self.dt),
            ("v_limit", self.v_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.i_min.is_finite() && self.i_max.is_finite() && self.i_min <= self.i_max) {
            return Err(EnvError::InvalidParams(format!(
                "need i_min <= i_max, got [{}, {}]",
                self.i_min, self.i_max
            )));
        }
        if !(0.0 <= self.soc0 && self.soc0 < self.soc_target && self.soc_target <= 1.0) {
            return Err(EnvError::InvalidParams(format!(
                "need 0 <= soc0 < soc_target <= 1, got soc0 = {}, soc_target = {}",
                self.soc0, self.soc_target
            )));
        }
        Ok(())
    }

    /// Per-step decay of the RC-branch voltage, `1 - Δt/(R1·C1)`.
    pub fn rc_decay(&self) -> f64 {
        1.0 - self.dt / (self.r1 * self.c1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmState {
    pub soc: f64,
    pub v_rc: f64,
}

impl EcmState {
    pub fn initial(params: &EcmParams) -> Self {
        Self {
            soc: params.soc0,
            v_rc: 0.0,
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.soc, self.v_rc]
    }
}

/// Piecewise-linear open-circuit voltage with clamped ends.
#[derive(Debug, Clone, PartialEq)]
pub struct OcvTable {
    soc: Vec<f64>,
    volts: Vec<f64>,
}

impl OcvTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, EnvError> {
        if points.len() < 2 {
            return Err(EnvError::Ocv(format!("need at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(EnvError::Ocv("non-finite entry".into()));
        }
        for (k, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(EnvError::Ocv(format!(
                    "SOC breakpoints must be strictly increasing (row {}: {} after {})",
                    k + 2,
                    w[1].0,
                    w[0].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(EnvError::Ocv(format!(
                    "voltage must be non-decreasing (row {}: {} after {})",
                    k + 2,
                    w[1].1,
                    w[0].1
                )));
            }
        }
        let (soc, volts) = points.into_iter().unzip();
        Ok(Self { soc, volts })
    }

    /// Parses `soc,voltage` lines. A non-numeric first line is taken as a header.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [s, v] => s.parse::<f64>().ok().zip(v.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(p) => points.push(p),
                None if points.is_empty() && n == 0 => continue,
                None => {
                    return Err(EnvError::Ocv(format!(
                        "line {}: expected `soc,voltage`, got {line:?}",
                        n + 1
                    )))
                }
            }
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn standin() -> Self {
        Self::parse(STANDIN_OCV_CSV).expect("bundled OCV table is valid")
    }

    pub fn voltage(&self, soc: f64) -> f64 {
        let n = self.soc.len();
        if soc <= self.soc[0] {
            return self.volts[0];
        }
        if soc >= self.soc[n - 1] {
            return self.volts[n - 1];
        }
        let hi = self.soc.partition_point(|&s| s <= soc);
        let lo = hi - 1;
        let frac = (soc - self.soc[lo]) / (self.soc[hi] - self.soc[lo]);
        self.volts[lo] + frac * (self.volts[hi] - self.volts[lo])
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.soc.iter().copied().zip(self.volts.iter().copied())
    }
}

/// Discrete current levels in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    levels: Vec<f64>,
}

impl ActionGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, EnvError> {
        if levels.is_empty() {
            return Err(EnvError::InvalidParams("action grid is empty".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) || levels.iter().any(|l| !l.is_finite()) {
            return Err(EnvError::InvalidParams(
                "action levels must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// `n` evenly spaced levels with exact endpoints.
    pub fn uniform(min: f64, max: f64, n: usize) -> Result<Self, EnvError> {
        if n < 2 || min >= max {
            return Err(EnvError::InvalidParams(format!(
                "uniform grid needs n >= 2 and min < max (n = {n}, [{min}, {max}])"
            )));
        }
        let mut levels: Vec<f64> = (0..n)
            .map(|k| min + (max - min) * k as f64 / (n - 1) as f64)
            .collect();
        levels[n - 1] = max;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmStep {
    pub next: EcmState,
    pub voltage: f64,
    pub reward: f64,
    pub constraint: f64,
}

pub fn ecm_step(
    params: &EcmParams,
    ocv: &OcvTable,
    state: EcmState,
    current: f64,
) -> Result<EcmStep, EnvError> {
    if !(current >= params.i_min && current <= params.i_max) {
        return Err(EnvError::CurrentOutOfBounds {
            current,
            min: params.i_min,
            max: params.i_max,
        });
    }
    let voltage = ocv.voltage(state.soc) + state.v_rc + current * params.r0;
    let next = EcmState {
        soc: state.soc + current * params.dt / params.capacity,
        v_rc: state.v_rc - params.dt / (params.r1 * params.c1) * state.v_rc
            + params.dt / params.c1 * current,
    };
    let reward = -(next.soc - params.soc_target).powi(2);
    Ok(EcmStep {
        next,
        voltage,
        reward,
        constraint: voltage - params.v_limit,
    })
}

/// Battery charging task with one terminal-voltage constraint.
#[derive(Debug, Clone)]
pub struct BatteryEnv {
    params: EcmParams,
    ocv: OcvTable,
    grid: ActionGrid,
    horizon: usize,
    state: EcmState,
    t: usize,
}

impl BatteryEnv {
    pub fn new(
        params: EcmParams,
        ocv: OcvTable,
        grid: ActionGrid,
        horizon: usize,
    ) -> Result<Self, EnvError> {
        params.validate()?;
        let levels = grid.levels();
        if levels[0] != params.i_min || levels[levels.len() - 1] != params.i_max {
            return Err(EnvError::InvalidParams(format!(
                "action grid must span [{}, {}] A exactly",
                params.i_min, params.i_max
            )));
        }
        if horizon == 0 {
            return Err(EnvError::InvalidParams("horizon must be positive".into()));
        }
        let state = EcmState::initial(&params);
        Ok(Self {
            params,
            ocv,
            grid,
            horizon,
            state,
            t: 0,
        })
    }

    pub fn params(&self) -> &EcmParams {
        &self.params
    }

    pub fn ocv(&self) -> &OcvTable {
        &self.ocv
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn state(&self) -> EcmState {
        self.state
    }

    pub fn step_current(&mut self, current: f64) -> Result<EcmStep, EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let out = ecm_step(&self.params, &self.ocv, self.state, current)?;
        self.state = out.next;
        self.t += 1;
        Ok(out)
    }
}

impl Environment for BatteryEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn action_values(&self) -> &[f64] {
        self.grid.levels()
    }

    fn state_bounds(&self) -> Vec<(f64, f64)> {
        // V_RC settles at I·R1, so the largest current bounds it.
        let v_rc_max = self.params.i_max.abs().max(self.params.i_min.abs()) * self.params.r1;
        vec![(0.0, 1.0), (0.0, v_rc_max.max(f64::MIN_POSITIVE))]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = EcmState::initial(&self.params);
        self.t = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let current = *self
            .grid
            .levels()
            .get(action)
            .ok_or(EnvError::ActionOutOfRange {
                index: action,
                len: self.grid.len(),
            })?;
        let out = self.step_current(current)?;
        Ok(StepOutcome {
            next_state: out.next.to_vec(),
            reward: out.reward,
            constraints: vec![out.constraint],
            terminal: self.t == self.horizon,
        })
    }
}
