use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{affine_rows, leaky};
use super::{Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::par::Execution;
use crate::stochastic::fill_standard_normal;

/// Layer sizes `n_0, n̄ (× hidden_layers), n_L` and the normalization and
/// activation settings shared by every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub output: usize,
    pub batch_norm: bool,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Architecture {
    pub fn new(input: usize, width: usize, hidden_layers: usize, output: usize) -> Self {
        Architecture {
            input,
            width,
            hidden_layers,
            output,
            batch_norm: true,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.99,
        }
    }

    pub fn without_batch_norm(mut self) -> Self {
        self.batch_norm = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || (self.hidden_layers > 0 && self.width == 0) {
            return Err(invalid(format!("layer sizes must be positive: {:?}", self.layer_sizes())));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(invalid("batch-norm eps must be positive and momentum in [0, 1)"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input];
        sizes.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        sizes.push(self.output);
        sizes
    }

    /// Weights and biases `Σ_l n_l (n_{l-1} + 1)`.
    pub fn affine_parameter_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Affine parameters plus γ, β, running mean and running variance of each
    /// normalized hidden layer.
    pub fn parameter_count(&self) -> usize {
        let bn = if self.batch_norm {
            4 * self.width * self.hidden_layers
        } else {
            0
        };
        self.affine_parameter_count() + bn
    }

    /// Parameters updated by the optimizer.
    pub fn trainable_count(&self) -> usize {
        let bn = if self.batch_norm {
            2 * self.width * self.hidden_layers
        } else {
            0
        };
        self.affine_parameter_count() + bn
    }

    /// The closed form `(n_0+1)n̄ + (n̄+1)n̄(L-1) + (n̄+1)n_L` with `L - 1`
    /// hidden layers. It counts one more hidden-to-hidden block than the
    /// layer list contains; reported for comparison only.
    pub fn closed_form_count(&self) -> usize {
        let (n0, nb, nl) = (self.input, self.width, self.output);
        (n0 + 1) * nb + (nb + 1) * nb * self.hidden_layers + (nb + 1) * nl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

/// Fully connected network: affine map, batch normalization and leaky ReLU
/// on each hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    pub(crate) arch: Architecture,
    /// `[n_l, n_{l-1}]` per layer.
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<Vec<f64>>,
    pub(crate) gammas: Vec<Vec<f64>>,
    pub(crate) betas: Vec<Vec<f64>>,
    pub(crate) running_mean: Vec<Vec<f64>>,
    pub(crate) running_var: Vec<Vec<f64>>,
    pub(crate) mode: Mode,
}

/// Tape handles produced by [`FeedforwardNet::forward`], parameters listed
/// in [`FeedforwardNet::param_blocks`] order.
pub struct ForwardTrace<'t> {
    pub output: Var<'t>,
    pub params: Vec<Var<'t>>,
}

impl FeedforwardNet {
    /// All weights zero, normalization state at its initial values.
    pub(crate) fn zeroed(arch: &Architecture) -> Self {
        let sizes = arch.layer_sizes();
        let norms = if arch.batch_norm { arch.hidden_layers } else { 0 };
        let n = arch.width;
        FeedforwardNet {
            arch: arch.clone(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            gammas: vec![vec![1.0; n]; norms],
            betas: vec![vec![0.0; n]; norms],
            running_mean: vec![vec![0.0; n]; norms],
            running_var: vec![vec![1.0; n]; norms],
            mode: Mode::Training,
        }
    }

    /// He initialization: weights `N(0, 2/fan_in)`, zero biases, `γ = 1`,
    /// `β = 0`, running mean 0 and running variance 1.
    pub fn he_init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let sizes = arch.layer_sizes();
        let mut net = Self::zeroed(arch);
        for (m, fan_in) in net.weights.iter_mut().zip(&sizes) {
            fill_standard_normal(rng, m);
            let s = (2.0 / *fan_in as f64).sqrt();
            m.iter_mut().for_each(|v| *v *= s);
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Switches to inference mode; running statistics stop changing.
    pub fn freeze(&mut self) {
        self.mode = Mode::Inference;
    }

    /// Adds `delta` to the output-layer bias.
    pub fn shift_output(&mut self, delta: &[f64]) {
        let last = self.biases.last_mut().expect("at least one layer");
        assert_eq!(last.len(), delta.len(), "one shift per output");
        for (b, d) in last.iter_mut().zip(delta) {
            *b += d;
        }
    }

    pub fn unfreeze(&mut self) {
        self.mode = Mode::Training;
    }

    pub fn parameter_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum::<usize>()
            + self.running_mean.iter().chain(&self.running_var).map(Vec::len).sum::<usize>()
    }

    /// Trainable blocks: `W_1, b_1, γ_1, β_1, …, W_L, b_L`.
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.push(self.weights[l].as_slice());
            out.push(self.biases[l].as_slice());
            if l < self.gammas.len() {
                out.push(self.gammas[l].as_slice());
                out.push(self.betas[l].as_slice());
            }
        }
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut gammas = self.gammas.iter_mut();
        let mut betas = self.betas.iter_mut();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
            if let (Some(g), Some(be)) = (gammas.next(), betas.next()) {
                out.push(g);
                out.push(be);
            }
        }
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.push(format!("layer{}.weight", l + 1));
            out.push(format!("layer{}.bias", l + 1));
            if l < self.gammas.len() {
                out.push(format!("layer{}.bn_scale", l + 1));
                out.push(format!("layer{}.bn_shift", l + 1));
            }
        }
        out
    }

    pub fn running_stats(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.running_mean, &self.running_var)
    }

    /// Stable FNV-1a digest over parameters and running statistics.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let blocks = self.param_blocks();
        let stats = self.running_mean.iter().chain(&self.running_var);
        for v in blocks.into_iter().chain(stats.map(Vec::as_slice)).flatten() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Records the network on `tape`. In training mode batch statistics are
    /// used and the running statistics are updated.
    pub fn forward<'t>(&mut self, tape: &'t Tape, x: Var<'t>, mode: Mode) -> Result<ForwardTrace<'t>> {
        let shape = x.shape();
        let rows = shape.first().copied().unwrap_or(0);
        if shape.len() != 2 || shape[1] != self.arch.input {
            return Err(invalid(format!(
                "network expects [batch, {}] input, got {shape:?}",
                self.arch.input
            )));
        }
        if mode == Mode::Training {
            if self.mode == Mode::Inference {
                return Err(invalid("cannot run a frozen network in training mode"));
            }
            if self.arch.batch_norm && self.arch.hidden_layers > 0 && rows < 2 {
                return Err(invalid("batch normalization needs at least 2 samples in training mode"));
            }
        }
        let sizes = self.arch.layer_sizes();
        let mut params = Vec::new();
        let mut h = x;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let w = tape.param(Tensor::from_parts(vec![sizes[l + 1], sizes[l]], self.weights[l].clone()));
            let b = tape.param(Tensor::from_parts(vec![sizes[l + 1]], self.biases[l].clone()));
            params.push(w);
            params.push(b);
            h = h.linear(w, b);
            if l == last {
                break;
            }
            if l < self.gammas.len() {
                let n = sizes[l + 1];
                let g = tape.param(Tensor::from_parts(vec![n], self.gammas[l].clone()));
                let be = tape.param(Tensor::from_parts(vec![n], self.betas[l].clone()));
                params.push(g);
                params.push(be);
                h = match mode {
                    Mode::Training => {
                        let (out, mean, var) = h.batch_norm_train(g, be, self.arch.bn_eps);
                        let m = self.arch.bn_momentum;
                        for (r, v) in self.running_mean[l].iter_mut().zip(&mean) {
                            *r = m * *r + (1.0 - m) * v;
                        }
                        for (r, v) in self.running_var[l].iter_mut().zip(&var) {
                            *r = m * *r + (1.0 - m) * v;
                        }
                        out
                    }
                    Mode::Inference => h.batch_norm_frozen(
                        g,
                        be,
                        &self.running_mean[l],
                        &self.running_var[l],
                        self.arch.bn_eps,
                    ),
                };
            }
            h = h.leaky_relu(self.arch.leaky_slope);
        }
        Ok(ForwardTrace { output: h, params })
    }

    /// Replaces the running statistics by the plain average of the batch
    /// statistics over `batches`, with the parameters held fixed.
    pub fn calibrate_statistics(&mut self, batches: &[Vec<f64>]) -> Result<()> {
        if !self.arch.batch_norm || self.gammas.is_empty() || batches.is_empty() {
            return Ok(());
        }
        let (mode, momentum) = (self.mode, self.arch.bn_momentum);
        self.mode = Mode::Training;
        let mut outcome = Ok(());
        for (n, x) in batches.iter().enumerate() {
            self.arch.bn_momentum = n as f64 / (n + 1) as f64;
            let tape = Tape::new();
            let rows = x.len() / self.arch.input;
            let input = tape.constant(Tensor::from_parts(vec![rows, self.arch.input], x.clone()));
            if let Err(e) = self.forward(&tape, input, Mode::Training) {
                outcome = Err(e);
                break;
            }
        }
        self.arch.bn_momentum = momentum;
        self.mode = mode;
        outcome
    }

    /// Inference-mode evaluation of a `[rows, n_0]` batch without a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n0 = self.arch.input;
        if !x.len().is_multiple_of(n0) {
            return Err(invalid(format!(
                "input of length {} is not a multiple of {n0}",
                x.len()
            )));
        }
        Ok(self.predict_rows(x))
    }

    /// [`FeedforwardNet::predict`] split into row chunks under `exec`. Rows
    /// are independent in inference mode, so the result is identical.
    pub fn predict_with(&self, x: &[f64], exec: Execution) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let n0 = self.arch.input;
        if !x.len().is_multiple_of(n0) {
            return Err(invalid(format!(
                "input of length {} is not a multiple of {n0}",
                x.len()
            )));
        }
        let rows = x.len() / n0;
        if !exec.is_parallel() || rows <= CHUNK {
            return Ok(self.predict_rows(x));
        }
        let chunks = rows.div_ceil(CHUNK);
        let parts = exec.map(chunks, |c| {
            let end = ((c + 1) * CHUNK).min(rows);
            self.predict_rows(&x[c * CHUNK * n0..end * n0])
        });
        Ok(parts.concat())
    }

    fn predict_rows(&self, x: &[f64]) -> Vec<f64> {
        let sizes = self.arch.layer_sizes();
        let rows = x.len() / sizes[0];
        let mut h = x.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let (inp, out) = (sizes[l], sizes[l + 1]);
            let mut y = vec![0.0; rows * out];
            affine_rows(&h, &self.weights[l], &self.biases[l], inp, out, &mut y);
            if l < last {
                if l < self.gammas.len() {
                    let inv: Vec<f64> = self.running_var[l]
                        .iter()
                        .map(|v| 1.0 / (v + self.arch.bn_eps).sqrt())
                        .collect();
                    let (mean, g, b) = (&self.running_mean[l], &self.gammas[l], &self.betas[l]);
                    for row in y.chunks_exact_mut(out) {
                        for j in 0..out {
                            row[j] = g[j] * ((row[j] - mean[j]) * inv[j]) + b[j];
                        }
                    }
                }
                y.iter_mut().for_each(|v| *v = leaky(*v, self.arch.leaky_slope));
            }
            h = y;
        }
        h
    }
}
