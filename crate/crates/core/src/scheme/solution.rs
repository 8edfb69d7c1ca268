use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{FeedforwardNet, Mode, NetCheckpoint};
use crate::problem::ProblemSpec;
use crate::stochastic::TimeGrid;

use super::train::{train_step, NextValue, SilentObserver, TrainObserver};
use super::TrainConfig;

pub const SOLUTION_FORMAT: &str = "spde-solution";

/// Trained pair for one time step.
#[derive(Debug, Clone)]
pub struct StepNets {
    pub u: FeedforwardNet,
    pub v: FeedforwardNet,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Networks `(U_i, V_i)` for `i = 0..N-1`, conditioned on one `B` path.
/// Step `N` is the terminal function itself.
#[derive(Debug, Clone)]
pub struct SchemeSolution {
    pub grid: TimeGrid,
    /// `[N, l]` increments of `B`.
    pub b_path: Vec<f64>,
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub config: TrainConfig,
    pub run_seed: u64,
    pub steps: Vec<StepNets>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    grid: TimeGrid,
    b_path: Vec<f64>,
    d: usize,
    k: usize,
    l: usize,
    config: TrainConfig,
    run_seed: u64,
    final_losses: Vec<f64>,
    epoch_losses: Vec<Vec<f64>>,
}

impl SchemeSolution {
    /// `U_i` at `points: [m, d]`; `i = N` applies `h`.
    pub fn evaluate(&self, problem: &ProblemSpec, i: usize, points: &[f64]) -> Result<Vec<f64>> {
        if !points.len().is_multiple_of(self.d) {
            return Err(invalid("points are not a multiple of d"));
        }
        match i {
            i if i == self.steps.len() => Ok(problem.terminal_batch(points)),
            i if i < self.steps.len() => self.steps[i].u.predict(points),
            _ => Err(invalid(format!("step {i} beyond N = {}", self.steps.len()))),
        }
    }

    /// `U_0(x)` at a single point.
    pub fn u0(&self, problem: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(problem, 0, x)
    }

    pub fn final_losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.final_loss).collect()
    }

    /// Writes `manifest.json` and `step_XXX_u.json`, `step_XXX_v.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: SOLUTION_FORMAT.into(),
            grid: self.grid.clone(),
            b_path: self.b_path.clone(),
            d: self.d,
            k: self.k,
            l: self.l,
            config: self.config.clone(),
            run_seed: self.run_seed,
            final_losses: self.final_losses(),
            epoch_losses: self.steps.iter().map(|s| s.epoch_losses.clone()).collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (i, s) in self.steps.iter().enumerate() {
            NetCheckpoint::from_net(&s.u).save(&dir.join(format!("step_{i:03}_u.json")))?;
            NetCheckpoint::from_net(&s.v).save(&dir.join(format!("step_{i:03}_v.json")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if m.format != SOLUTION_FORMAT {
            return Err(invalid(format!("unknown solution format '{}'", m.format)));
        }
        let grid = m.grid;
        let n = grid.len();
        if m.final_losses.len() != n || m.epoch_losses.len() != n || m.b_path.len() != n * m.l {
            return Err(invalid("solution manifest is inconsistent with its grid"));
        }
        let mut steps = Vec::with_capacity(n);
        for i in 0..n {
            let u = NetCheckpoint::load(&dir.join(format!("step_{i:03}_u.json")))?.into_net()?;
            let v = NetCheckpoint::load(&dir.join(format!("step_{i:03}_v.json")))?.into_net()?;
            steps.push(StepNets {
                u,
                v,
                final_loss: m.final_losses[i],
                epoch_losses: m.epoch_losses[i].clone(),
            });
        }
        Ok(SchemeSolution {
            grid,
            b_path: m.b_path,
            d: m.d,
            k: m.k,
            l: m.l,
            config: m.config,
            run_seed: m.run_seed,
            steps,
        })
    }
}

pub fn solve(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    b_path: &[f64],
    config: &TrainConfig,
    run_seed: u64,
) -> Result<SchemeSolution> {
    solve_with(problem, grid, b_path, config, run_seed, &SilentObserver)
}

/// Backward loop `i = N-1, …, 0`.
pub fn solve_with(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    b_path: &[f64],
    config: &TrainConfig,
    run_seed: u64,
    observer: &dyn TrainObserver,
) -> Result<SchemeSolution> {
    let n = grid.len();
    let mut rev: Vec<StepNets> = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let next = match rev.last() {
            None => NextValue::Terminal,
            Some(s) => NextValue::Network(&s.u),
        };
        let warm = if config.warm_start { rev.last() } else { None };
        let nets = train_step(problem, grid, i, b_path, next, config, run_seed, warm, observer)?;
        debug_assert_eq!(nets.u.mode(), Mode::Inference);
        rev.push(nets);
    }
    rev.reverse();
    Ok(SchemeSolution {
        grid: grid.clone(),
        b_path: b_path.to_vec(),
        d: problem.d,
        k: problem.k,
        l: problem.l,
        config: config.clone(),
        run_seed,
        steps: rev,
    })
}
