//! Small fully connected regression networks.
//!
//! Hidden layers use the logistic sigmoid; the output layer is affine with a
//! single unit so the network can represent unbounded Q-values. Parameters are
//! stored in one flat buffer, layer by layer, each layer holding its weight
//! matrix in row-major order (one row per output unit) followed by its biases.
//! The plain-text snapshot format mirrors that layout.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer sizes {sizes:?}: {reason}")]
    InvalidSpec { sizes: Vec<usize>, reason: &'static str },
    #[error("input has width {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Layer widths from input to output. The output width is always 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    sizes: Vec<usize>,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self, NnError> {
        let reason = if sizes.len() < 3 {
            Some("need an input width, at least one hidden layer and an output width")
        } else if sizes.contains(&0) {
            Some("all widths must be positive")
        } else if *sizes.last().unwrap() != 1 {
            Some("output width must be 1")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(NnError::InvalidSpec { sizes, reason }),
            None => Ok(Self { sizes }),
        }
    }

    /// Builds `[input, hidden..., 1]`.
    pub fn with_hidden(input: usize, hidden: &[usize]) -> Result<Self, NnError> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// Minibatch gradient-descent settings for [`Mlp::fit`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.15,
            epochs: 50,
            batch_size: 32,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(NnError::InvalidConfig("init scale must be non-negative"));
        }
        Ok(())
    }
}

/// Input/target pairs for regression. All inputs share one width.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    width: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], target: f64) -> Result<(), NnError> {
        if input.len() != self.width {
            return Err(NnError::DimensionMismatch {
                expected: self.width,
                got: input.len(),
            });
        }
        self.inputs.extend_from_slice(input);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }
}

/// Result of a call to [`Mlp::fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// `prediction - target` for every sample under the final parameters.
    pub residuals: Vec<f64>,
    /// Mean squared error over the whole dataset after each epoch.
    pub loss_trace: Vec<f64>,
}

impl FitOutcome {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Network parameters plus the layer layout they follow.
/// Reusable buffers for backpropagation.
#[derive(Debug, Default)]
struct Scratch {
    acts: Vec<f64>,
    starts: Vec<usize>,
    delta: Vec<f64>,
    back: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: LayerSpec,
    params: Vec<f64>,
}

impl Mlp {
    /// Uniform init in `[-0.5, 0.5] * init_scale / sqrt(fan_in)` for weights and biases.
    pub fn new(spec: LayerSpec, init_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.sizes.windows(2) {
            let scale = init_scale / (w[0] as f64).sqrt();
            for _ in 0..w[1] * (w[0] + 1) {
                params.push((rng.gen::<f64>() - 0.5) * scale);
            }
        }
        Self { spec, params }
    }

    pub fn zeros(spec: LayerSpec) -> Self {
        let params = vec![0.0; spec.param_count()];
        Self { spec, params }
    }

    pub fn from_params(spec: LayerSpec, params: Vec<f64>) -> Result<Self, NnError> {
        if params.len() != spec.param_count() {
            return Err(NnError::Snapshot(format!(
                "expected {} parameters for {spec}, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index of the output bias in the flat parameter buffer.
    pub fn output_bias_index(&self) -> usize {
        self.params.len() - 1
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.spec.input_width() {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.input_width(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64, NnError> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    /// Hidden-layer activations, outermost vector indexed by hidden layer.
    pub fn hidden_activations(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
        self.check_input(input)?;
        let mut acts = self.activations(input);
        acts.remove(0);
        acts.pop();
        Ok(acts)
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> f64 {
        let mut cur: Vec<f64> = input.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        let last = self.spec.num_layers() - 1;
        for (l, w) in self.spec.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_out * (n_in + 1)];
            next.clear();
            for (row, b) in weights.chunks_exact(n_in).zip(biases) {
                let z = row.iter().zip(&cur).map(|(w, x)| w * x).sum::<f64>() + b;
                next.push(if l == last { z } else { sigmoid(z) });
            }
            std::mem::swap(&mut cur, &mut next);
            offset += n_out * (n_in + 1);
        }
        cur[0]
    }

    /// Activations of every layer, input included.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.spec.sizes.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        let last = self.spec.num_layers() - 1;
        for (l, w) in self.spec.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_out * (n_in + 1)];
            let prev = acts.last().unwrap();
            let out: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(biases)
                .map(|(row, b)| {
                    let z = row.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>() + b;
                    if l == last {
                        z
                    } else {
                        sigmoid(z)
                    }
                })
                .collect();
            acts.push(out);
            offset += n_out * (n_in + 1);
        }
        acts
    }

    /// Adds `scale * d/dθ (f(x) - target)^2` into `grad`; returns the residual.
    fn accumulate_gradient(
        &self,
        input: &[f64],
        target: f64,
        scale: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> f64 {
        let sizes = &self.spec.sizes;
        let Scratch { acts, starts, delta, back } = scratch;
        // Forward pass into one flat buffer; layer l occupies acts[starts[l]..starts[l + 1]].
        acts.clear();
        starts.clear();
        acts.extend_from_slice(input);
        starts.push(0);
        let last = self.spec.num_layers() - 1;
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let start = *starts.last().unwrap();
            starts.push(acts.len());
            for j in 0..n_out {
                let row = &self.params[offset + j * n_in..offset + (j + 1) * n_in];
                let z = row
                    .iter()
                    .zip(&acts[start..start + n_in])
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.params[offset + n_in * n_out + j];
                acts.push(if l == last { z } else { sigmoid(z) });
            }
            offset += n_out * (n_in + 1);
        }
        starts.push(acts.len());
        let residual = acts[acts.len() - 1] - target;

        // delta holds dLoss/dz for the current layer's pre-activations.
        delta.clear();
        delta.push(2.0 * residual * scale);
        let mut offset = self.params.len();
        for l in (0..self.spec.num_layers()).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            offset -= n_out * (n_in + 1);
            let prev = &acts[starts[l]..starts[l + 1]];
            let (gw, gb) = grad[offset..offset + n_out * (n_in + 1)].split_at_mut(n_in * n_out);
            for (j, d) in delta.iter().enumerate() {
                gb[j] += d;
                for (g, x) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(prev) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let weights = &self.params[offset..offset + n_in * n_out];
                back.clear();
                back.resize(n_in, 0.0);
                for (j, d) in delta.iter().enumerate() {
                    for (b, w) in back.iter_mut().zip(&weights[j * n_in..(j + 1) * n_in]) {
                        *b += d * w;
                    }
                }
                for (b, a) in back.iter_mut().zip(prev) {
                    *b *= a * (1.0 - a);
                }
                std::mem::swap(delta, back);
            }
        }
        residual
    }

    /// Gradient of `(forward(input) - target)^2` in flat parameter order.
    pub fn gradient(&self, input: &[f64], target: f64) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(input, target, 1.0, &mut grad, &mut Scratch::default());
        Ok(grad)
    }

    pub fn mse(&self, data: &Dataset) -> Result<f64, NnError> {
        if data.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        self.check_input(data.input(0))?;
        Ok(self.mse_unchecked(data))
    }

    fn mse_unchecked(&self, data: &Dataset) -> f64 {
        let sum: f64 = (0..data.len())
            .map(|i| {
                let r = self.forward_unchecked(data.input(i)) - data.target(i);
                r * r
            })
            .sum();
        sum / data.len() as f64
    }

    /// Minibatch gradient descent on mean squared error.
    ///
    /// Sample order is reshuffled every epoch from `cfg.seed`, so two calls with
    /// equal parameters, data and config produce bit-identical results.
    pub fn fit(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome, NnError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        self.check_input(data.input(0))?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut scratch = Scratch::default();
        let mut loss_trace = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    self.accumulate_gradient(
                        data.input(i),
                        data.target(i),
                        scale,
                        &mut grad,
                        &mut scratch,
                    );
                }
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
            let loss = self.mse_unchecked(data);
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, loss });
            }
            loss_trace.push(loss);
        }

        let residuals = (0..data.len())
            .map(|i| self.forward_unchecked(data.input(i)) - data.target(i))
            .collect();
        Ok(FitOutcome {
            residuals,
            loss_trace,
        })
    }

    /// Plain-text snapshot: the number of layer widths, the widths, then every
    /// parameter in flat order, one value per line.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{}\n", self.spec.sizes.len()));
        for s in &self.spec.sizes {
            out.push_str(&format!("{s}\n"));
        }
        for p in &self.params {
            out.push_str(&format!("{p:e}\n"));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, NnError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let bad = |what: &str| NnError::Snapshot(what.to_string());
        let n: usize = lines
            .next()
            .ok_or_else(|| bad("empty snapshot"))?
            .parse()
            .map_err(|_| bad("first line must be the number of layer widths"))?;
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            let s = lines.next().ok_or_else(|| bad("truncated layer widths"))?;
            sizes.push(s.parse().map_err(|_| bad("layer width is not an integer"))?);
        }
        let spec = LayerSpec::new(sizes)?;
        let params = lines
            .map(|l| l.parse::<f64>().map_err(|_| NnError::Snapshot(format!("bad parameter {l:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Self::from_params(spec, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        fs::write(path, self.to_snapshot())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_snapshot(&fs::read_to_string(path)?)
    }

    /// FNV-1a over the parameter bit patterns; used to detect mutation.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}
