use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::Architecture;

/// Per-step training budget and network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Trajectories per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub initial_rate: f64,
    /// Epochs without improvement before the rate is halved.
    pub patience: usize,
    /// Decrease of the epoch loss below the best value that counts as an
    /// improvement.
    #[serde(default)]
    pub min_delta: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Initialize step `i` from the trained step `i+1` instead of He init.
    pub warm_start: bool,
    /// Points used when exporting solution curves.
    pub eval_samples: usize,
    pub batch_norm: bool,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub adam_eps: f64,
    /// Fresh batches drawn after training. They replace the batch-norm
    /// moving averages and re-estimate the output offset of `U`, which
    /// absorbs the optimizer jitter of the final iterate. 0 skips the pass.
    #[serde(default = "default_calibration")]
    pub bn_calibration_batches: usize,
}

fn default_calibration() -> usize {
    500
}

impl TrainConfig {
    /// Batch 64, 100 epochs of 100 iterations, rate 0.01 halved after 10
    /// epochs without a 1e-4 decrease, two hidden layers; width 11 for
    /// `d = 1`, `d + 10` for `d ≤ 10` and `d + 50` above.
    pub fn for_dimension(d: usize) -> Self {
        let hidden_width = match d {
            1 => 11,
            2..=10 => d + 10,
            _ => d + 50,
        };
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            iterations: 100,
            initial_rate: 0.01,
            patience: 10,
            min_delta: 1e-4,
            hidden_width,
            hidden_layers: 2,
            warm_start: false,
            eval_samples: 10_000,
            batch_norm: true,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.99,
            adam_eps: 1e-8,
            bn_calibration_batches: default_calibration(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if self.epochs == 0 || self.iterations == 0 {
            return Err(invalid("epochs and iterations must be at least 1"));
        }
        if !(self.initial_rate > 0.0 && self.initial_rate.is_finite()) {
            return Err(invalid("initial learning rate must be positive"));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(invalid("min_delta must be finite and non-negative"));
        }
        if self.patience == 0 {
            return Err(invalid("patience must be at least 1"));
        }
        if self.hidden_width == 0 {
            return Err(invalid("hidden width must be at least 1"));
        }
        Ok(())
    }

    fn arch(&self, input: usize, output: usize) -> Architecture {
        Architecture {
            input,
            width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            output,
            batch_norm: self.batch_norm,
            leaky_slope: self.leaky_slope,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }

    /// `U_i : R^d → R^k`.
    pub fn value_arch(&self, d: usize, k: usize) -> Architecture {
        self.arch(d, k)
    }

    /// `V_i : R^d → R^{k×d}`.
    pub fn gradient_arch(&self, d: usize, k: usize) -> Architecture {
        self.arch(d, k * d)
    }
}
