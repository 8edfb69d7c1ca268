use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, FeedforwardNet, Mode};
use crate::error::{invalid, Result};

pub const CHECKPOINT_FORMAT: &str = "spde-feedforward";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON container for one network. Floats are written in shortest
/// round-trip form, so save → load reproduces every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub mode: Mode,
    pub blocks: Vec<ParamBlock>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

impl NetCheckpoint {
    pub fn from_net(net: &FeedforwardNet) -> Self {
        let sizes = net.arch.layer_sizes();
        let mut shapes = Vec::new();
        for l in 0..net.weights.len() {
            shapes.push(vec![sizes[l + 1], sizes[l]]);
            shapes.push(vec![sizes[l + 1]]);
            if l < net.gammas.len() {
                shapes.push(vec![sizes[l + 1]]);
                shapes.push(vec![sizes[l + 1]]);
            }
        }
        let blocks = net
            .block_names()
            .into_iter()
            .zip(shapes)
            .zip(net.param_blocks())
            .map(|((name, shape), values)| ParamBlock {
                name,
                shape,
                values: values.to_vec(),
            })
            .collect();
        NetCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: net.arch.clone(),
            mode: net.mode,
            blocks,
            running_mean: net.running_mean.clone(),
            running_var: net.running_var.clone(),
        }
    }

    pub fn into_net(self) -> Result<FeedforwardNet> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(invalid(format!("unknown checkpoint format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(invalid(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        self.architecture.validate()?;
        let mut net = FeedforwardNet::zeroed(&self.architecture);
        let names = net.block_names();
        if names.len() != self.blocks.len() {
            return Err(invalid("checkpoint block count does not match architecture"));
        }
        for ((dst, name), src) in net.param_blocks_mut().into_iter().zip(&names).zip(&self.blocks) {
            if &src.name != name || src.values.len() != dst.len() {
                return Err(invalid(format!("checkpoint block '{}' does not fit '{name}'", src.name)));
            }
            dst.copy_from_slice(&src.values);
        }
        let stats_ok = |s: &[Vec<f64>]| {
            s.len() == net.running_mean.len() && s.iter().all(|v| v.len() == self.architecture.width)
        };
        if !stats_ok(&self.running_mean) || !stats_ok(&self.running_var) {
            return Err(invalid("checkpoint running statistics do not match architecture"));
        }
        net.running_mean = self.running_mean;
        net.running_var = self.running_var;
        net.mode = self.mode;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
