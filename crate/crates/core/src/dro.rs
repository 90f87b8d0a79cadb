//! Constraint-tightening offsets from a Wasserstein ambiguity set.
//!
//! Given scalar TD-error samples of one constraint Q-function, we standardize
//! them, find the smallest half-width `σ` of the interval `(-σ, σ)` whose
//! worst-case exit probability over the Wasserstein ball is at most `η`, and
//! map the upper interval vertex back to the original units:
//!
//! ```text
//! ε(ℓ)      = D · sqrt((2/ℓ) · ln(1/(1-β)))
//! h(σ, λ)   = λ·ε + (1/ℓ) Σ_j (1 - λ·(σ - |ϑ_j|)^+)^+
//! p(σ)      = inf_{λ ≥ 0} h(σ, λ)
//! σ*        = min { σ ∈ [0, σ_max] : p(σ) ≤ η }
//! q         = μ + sqrt(Σ) · σ*
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DroError {
    #[error("invalid Wasserstein config: {0}")]
    InvalidConfig(&'static str),
    #[error("sample set is empty")]
    EmptySamples,
    #[error("sample {index} is not finite ({value})")]
    NonFiniteSample { index: usize, value: f64 },
    #[error("interval half-width must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("Wasserstein radius must be non-negative and finite, got {0}")]
    InvalidRadius(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WassersteinConfig {
    /// Diameter of the support of the TD error, in constraint units.
    pub support_diameter: f64,
    /// Probability that the true distribution lies inside the ball.
    pub beta: f64,
    /// Allowed violation probability of the chance constraint.
    pub eta: f64,
    /// Upper bound on σ in standardized units.
    pub sigma_max: f64,
    /// Bisection stopping width for σ.
    pub tolerance: f64,
}

impl Default for WassersteinConfig {
    fn default() -> Self {
        Self {
            support_diameter: 0.2,
            beta: 0.98,
            eta: 0.02,
            sigma_max: 10.0,
            tolerance: 1e-4,
        }
    }
}

impl WassersteinConfig {
    pub fn validate(&self) -> Result<(), DroError> {
        if !(self.support_diameter > 0.0 && self.support_diameter.is_finite()) {
            return Err(DroError::InvalidConfig("support diameter must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(DroError::InvalidConfig("beta must lie in (0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(DroError::InvalidConfig("eta must lie in (0, 1)"));
        }
        if !(self.sigma_max > 0.0 && self.sigma_max.is_finite()) {
            return Err(DroError::InvalidConfig("sigma_max must be positive"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(DroError::InvalidConfig("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Empirical TD-error samples for one constraint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TdSampleSet {
    samples: Vec<f64>,
}

impl TdSampleSet {
    pub fn new(samples: Vec<f64>) -> Result<Self, DroError> {
        if samples.is_empty() {
            return Err(DroError::EmptySamples);
        }
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DroError::NonFiniteSample { index, value });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Standardized samples `ϑ_j = (R_j - μ) / sqrt(Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSamples {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub values: Vec<f64>,
    /// Set when the samples carry no spread; `values` are then all zero.
    pub degenerate: bool,
}

impl NormalizedSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSolution {
    pub sigma: f64,
    /// Even `σ_max` left the worst-case probability above `η`.
    pub infeasible: bool,
}

/// The tightening offset for one constraint and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DroOffset {
    pub q: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub ell: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub infeasible: bool,
    pub degenerate: bool,
}

impl DroOffset {
    /// Offset fixed by hand before any TD errors exist.
    pub fn initial(q: f64) -> Self {
        Self {
            q,
            sigma: 0.0,
            epsilon: 0.0,
            ell: 0,
            mean: 0.0,
            std_dev: 0.0,
            infeasible: false,
            degenerate: true,
        }
    }
}

pub fn epsilon_radius(ell: usize, cfg: &WassersteinConfig) -> Result<f64, DroError> {
    if ell == 0 {
        return Err(DroError::EmptySamples);
    }
    cfg.validate()?;
    let log_term = (1.0 / (1.0 - cfg.beta)).ln();
    Ok(cfg.support_diameter * (2.0 / ell as f64 * log_term).sqrt())
}

pub fn normalize(samples: &TdSampleSet) -> NormalizedSamples {
    let xs = samples.samples();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std_dev = var.sqrt();
    // Identical samples leave only rounding noise in the variance.
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if std_dev <= 8.0 * f64::EPSILON * scale || std_dev == 0.0 {
        return NormalizedSamples {
            mean,
            std_dev: 0.0,
            values: vec![0.0; xs.len()],
            degenerate: true,
        };
    }
    NormalizedSamples {
        mean,
        std_dev,
        values: xs.iter().map(|x| (x - mean) / std_dev).collect(),
        degenerate: false,
    }
}

/// Sorted absolute values with prefix sums, reused across many σ evaluations.
struct SortedMagnitudes {
    abs: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedMagnitudes {
    fn new(values: &[f64]) -> Self {
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(abs.len() + 1);
        prefix.push(0.0);
        for a in &abs {
            prefix.push(prefix.last().unwrap() + a);
        }
        Self { abs, prefix }
    }

    /// Worst-case probability of leaving `(-σ, σ)`.
    ///
    /// `h(σ, ·)` is convex and piecewise linear, so its infimum sits at `λ = 0`,
    /// at a kink `λ = 1/(σ - a_k)`, or in the `λ → ∞` limit, which is finite
    /// only when `ε = 0`. At the kink for `a_k`, only samples with
    /// `a_k ≤ a_j < σ` contribute a fractional term, equal to
    /// `(a_j - a_k)/(σ - a_k)`.
    fn worst_case(&self, sigma: f64, epsilon: f64) -> f64 {
        let ell = self.abs.len() as f64;
        let inside = self.abs.partition_point(|&a| a < sigma);
        let outside = (self.abs.len() - inside) as f64;
        let mut best = 1.0f64;
        if epsilon == 0.0 {
            best = best.min(outside / ell);
        }
        let mut k = 0;
        while k < inside {
            let ak = self.abs[k];
            let slack = sigma - ak;
            let count = (inside - k) as f64;
            let sum = self.prefix[inside] - self.prefix[k];
            let partial = ((sum - count * ak) / slack).max(0.0);
            let h = epsilon / slack + (outside + partial) / ell;
            best = best.min(h);
            // Equal magnitudes give the same kink.
            k = self.abs[k..inside].partition_point(|&a| a <= ak) + k;
        }
        best
    }
}

pub fn worst_case_probability(
    sigma: f64,
    samples: &NormalizedSamples,
    epsilon: f64,
) -> Result<f64, DroError> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(DroError::NegativeSigma(sigma));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(DroError::InvalidRadius(epsilon));
    }
    if samples.is_empty() {
        return Err(DroError::EmptySamples);
    }
    Ok(SortedMagnitudes::new(&samples.values).worst_case(sigma, epsilon))
}

/// Smallest σ in `[0, σ_max]` meeting the chance constraint, by bisection.
///
/// The worst-case probability is non-increasing in σ. The returned value is the
/// feasible end of the final bracket, so it is never below the true minimizer.
pub fn solve_sigma(
    samples: &NormalizedSamples,
    epsilon: f64,
    cfg: &WassersteinConfig,
) -> Result<SigmaSolution, DroError> {
    cfg.validate()?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(DroError::InvalidRadius(epsilon));
    }
    if samples.is_empty() {
        return Err(DroError::EmptySamples);
    }
    let mags = SortedMagnitudes::new(&samples.values);
    let feasible = |s: f64| mags.worst_case(s, epsilon) <= cfg.eta;

    if feasible(0.0) {
        return Ok(SigmaSolution {
            sigma: 0.0,
            infeasible: false,
        });
    }
    if !feasible(cfg.sigma_max) {
        return Ok(SigmaSolution {
            sigma: cfg.sigma_max,
            infeasible: true,
        });
    }
    let (mut lo, mut hi) = (0.0, cfg.sigma_max);
    while hi - lo > cfg.tolerance {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SigmaSolution {
        sigma: hi,
        infeasible: false,
    })
}

pub fn compute_offset(samples: &TdSampleSet, cfg: &WassersteinConfig) -> Result<DroOffset, DroError> {
    let epsilon = epsilon_radius(samples.len(), cfg)?;
    compute_offset_with_radius(samples, epsilon, cfg)
}

/// As [`compute_offset`] but with the ball radius supplied by the caller.
pub fn compute_offset_with_radius(
    samples: &TdSampleSet,
    epsilon: f64,
    cfg: &WassersteinConfig,
) -> Result<DroOffset, DroError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(DroError::EmptySamples);
    }
    let norm = normalize(samples);
    let ell = samples.len();
    if norm.degenerate {
        return Ok(DroOffset {
            q: norm.mean,
            sigma: 0.0,
            epsilon,
            ell,
            mean: norm.mean,
            std_dev: 0.0,
            infeasible: false,
            degenerate: true,
        });
    }
    let sol = solve_sigma(&norm, epsilon, cfg)?;
    Ok(DroOffset {
        q: norm.mean + norm.std_dev * sol.sigma,
        sigma: sol.sigma,
        epsilon,
        ell,
        mean: norm.mean,
        std_dev: norm.std_dev,
        infeasible: sol.infeasible,
        degenerate: false,
    })
}
