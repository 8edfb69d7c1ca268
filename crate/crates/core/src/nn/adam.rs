use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};

/// Adam moment accumulators for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state with `β_1 = 0.9`, `β_2 = 0.999`, `ε = 1e-8`.
    pub fn new(block_lens: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected update. Parameters are untouched when any gradient
    /// entry is non-finite; the error names the first offending block.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], rate: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid(format!(
                "optimizer tracks {} blocks, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (b, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(invalid(format!("block {b} has mismatched length")));
            }
        }
        if let Some(b) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(numeric(format!("gradient of parameter block {b}"), None));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= rate * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
