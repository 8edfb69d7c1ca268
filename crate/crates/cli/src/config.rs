//! Experiment configuration files.
//!
//! Only `problem.d` and `grid.N` are required; absent keys take the
//! per-dimension defaults of the benchmark study.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spde_core::analysis::{ConvergenceConfig, Corrector, RegressionConfig, ReportConfig};
use spde_core::scheme::TrainConfig;
use spde_core::{benchmark_problem, ProblemSpec, TimeGrid};

use crate::CliError;

/// Every accepted key, as `section.key`, for the usage text.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("problem.name", "problem identifier; only \"benchmark\" is built in"),
    ("problem.d", "space dimension (required)"),
    ("grid.T", "time horizon, default 1.0"),
    ("grid.N", "number of time steps (required); the studies use 32 for d = 1, otherwise 16"),
    ("architecture.hidden_width", "nodes per hidden layer; 11, d + 10 (d <= 10) or d + 50"),
    ("architecture.hidden_layers", "hidden layer count, default 2"),
    ("training.batch_size", "trajectories per mini-batch, default 64"),
    ("training.epochs", "epochs per time step, default 2000"),
    ("training.iterations", "iterations per epoch, default 2000"),
    ("training.initial_rate", "Adam learning rate before halving, default 0.01"),
    ("training.patience", "flat epochs before the rate is halved, default 10"),
    ("training.min_delta", "loss decrease that counts as an improvement, default 1e-4"),
    ("training.warm_start", "start step i from step i+1's weights, default false"),
    ("training.bn_calibration_batches", "batches for the final batch-norm statistics and output offset, default 500"),
    ("experiment.n_bpaths", "sampled B paths, default 5"),
    ("experiment.n_runs", "independent runs per B path, default 5"),
    ("experiment.x_eval", "evaluation point, default the origin"),
    ("experiment.corrector", "\"neural\" or \"regression\", default neural"),
    ("experiment.eval_samples", "points in figure exports, default 10000"),
    ("regression.degree", "polynomial degree, default 5"),
    ("regression.samples", "regression sample paths, default 100000"),
    ("regression.picard_passes", "fixed-point passes for the driver, default 1"),
    ("convergence.n_list", "step counts of a convergence study, default [8, 16, 32, 64]"),
    ("convergence.n_bpaths", "B paths per step count, default 20"),
    ("seeds.master", "master seed, default 2024"),
    ("output.dir", "artifact directory, default \"out\""),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    architecture: RawArchitecture,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    regression: RawRegression,
    #[serde(default)]
    convergence: RawConvergence,
    #[serde(default)]
    seeds: RawSeeds,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Option<String>,
    d: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(rename = "T")]
    horizon: Option<f64>,
    #[serde(rename = "N")]
    steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchitecture {
    hidden_width: Option<usize>,
    hidden_layers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    batch_size: Option<usize>,
    epochs: Option<usize>,
    iterations: Option<usize>,
    initial_rate: Option<f64>,
    patience: Option<usize>,
    min_delta: Option<f64>,
    warm_start: Option<bool>,
    bn_calibration_batches: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    n_bpaths: Option<usize>,
    n_runs: Option<usize>,
    x_eval: Option<Vec<f64>>,
    corrector: Option<CorrectorKind>,
    eval_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegression {
    degree: Option<usize>,
    samples: Option<usize>,
    picard_passes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConvergence {
    n_list: Option<Vec<usize>>,
    n_bpaths: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    master: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectorKind {
    Neural,
    Regression,
}

/// A fully resolved configuration. Serializing it writes every key, so a
/// written config parses back to the same value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub d: usize,
    pub horizon: f64,
    pub steps: usize,
    pub train: TrainConfig,
    pub n_bpaths: usize,
    pub n_runs: usize,
    pub x_eval: Vec<f64>,
    pub corrector: CorrectorKind,
    pub regression: RegressionConfig,
    pub n_list: Vec<usize>,
    pub convergence_bpaths: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Defaults for dimension `d`.
    pub fn for_dimension(d: usize) -> Self {
        Self::resolve(RawConfig {
            problem: RawProblem { name: None, d },
            grid: RawGrid {
                horizon: None,
                steps: Some(if d == 1 { 32 } else { 16 }),
            },
            ..Default::default()
        })
        .expect("defaults are valid")
    }

    fn resolve(raw: RawConfig) -> Result<Self, CliError> {
        let d = raw.problem.d;
        if d == 0 {
            return Err(CliError::Config("problem.d must be at least 1".into()));
        }
        let name = raw.problem.name.unwrap_or_else(|| "benchmark".into());
        if name != "benchmark" {
            return Err(CliError::Config(format!("unknown problem '{name}'")));
        }
        let steps = raw
            .grid
            .steps
            .ok_or_else(|| CliError::Config("missing required field grid.N".into()))?;
        let mut train = TrainConfig::for_dimension(d);
        let a = raw.architecture;
        let t = raw.training;
        train.hidden_width = a.hidden_width.unwrap_or(train.hidden_width);
        train.hidden_layers = a.hidden_layers.unwrap_or(train.hidden_layers);
        train.batch_size = t.batch_size.unwrap_or(train.batch_size);
        train.epochs = t.epochs.unwrap_or(train.epochs);
        train.iterations = t.iterations.unwrap_or(train.iterations);
        train.initial_rate = t.initial_rate.unwrap_or(train.initial_rate);
        train.patience = t.patience.unwrap_or(train.patience);
        train.min_delta = t.min_delta.unwrap_or(train.min_delta);
        train.warm_start = t.warm_start.unwrap_or(train.warm_start);
        train.bn_calibration_batches = t.bn_calibration_batches.unwrap_or(train.bn_calibration_batches);
        let e = raw.experiment;
        train.eval_samples = e.eval_samples.unwrap_or(train.eval_samples);
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let reg_default = RegressionConfig::default();
        let config = ExperimentConfig {
            problem: name,
            d,
            horizon: raw.grid.horizon.unwrap_or(1.0),
            steps,
            train,
            n_bpaths: e.n_bpaths.unwrap_or(5),
            n_runs: e.n_runs.unwrap_or(5),
            x_eval: e.x_eval.unwrap_or_else(|| vec![0.0; d]),
            corrector: e.corrector.unwrap_or(CorrectorKind::Neural),
            regression: RegressionConfig {
                degree: raw.regression.degree.unwrap_or(reg_default.degree),
                samples: raw.regression.samples.unwrap_or(reg_default.samples),
                picard_passes: raw.regression.picard_passes.unwrap_or(reg_default.picard_passes),
            },
            n_list: raw.convergence.n_list.unwrap_or_else(|| vec![8, 16, 32, 64]),
            convergence_bpaths: raw.convergence.n_bpaths.unwrap_or(20),
            master_seed: raw.seeds.master.unwrap_or(2024),
            out_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail(format!("grid.T must be positive, got {}", self.horizon));
        }
        if self.steps == 0 {
            return fail("grid.N must be at least 1".into());
        }
        if self.x_eval.len() != self.d {
            return fail(format!("experiment.x_eval has {} entries but d = {}", self.x_eval.len(), self.d));
        }
        if self.n_bpaths == 0 {
            return fail("experiment.n_bpaths must be at least 1".into());
        }
        if self.n_runs < 2 {
            return fail("experiment.n_runs must be at least 2".into());
        }
        if self.corrector == CorrectorKind::Regression && self.d > 2 {
            return fail(format!("the regression corrector supports d <= 2, got d = {}", self.d));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let raw = RawConfig {
            problem: RawProblem {
                name: Some(self.problem.clone()),
                d: self.d,
            },
            grid: RawGrid {
                horizon: Some(self.horizon),
                steps: Some(self.steps),
            },
            architecture: RawArchitecture {
                hidden_width: Some(t.hidden_width),
                hidden_layers: Some(t.hidden_layers),
            },
            training: RawTraining {
                batch_size: Some(t.batch_size),
                epochs: Some(t.epochs),
                iterations: Some(t.iterations),
                initial_rate: Some(t.initial_rate),
                patience: Some(t.patience),
                min_delta: Some(t.min_delta),
                warm_start: Some(t.warm_start),
                bn_calibration_batches: Some(t.bn_calibration_batches),
            },
            experiment: RawExperiment {
                n_bpaths: Some(self.n_bpaths),
                n_runs: Some(self.n_runs),
                x_eval: Some(self.x_eval.clone()),
                corrector: Some(self.corrector),
                eval_samples: Some(t.eval_samples),
            },
            regression: RawRegression {
                degree: Some(self.regression.degree),
                samples: Some(self.regression.samples),
                picard_passes: Some(self.regression.picard_passes),
            },
            convergence: RawConvergence {
                n_list: Some(self.n_list.clone()),
                n_bpaths: Some(self.convergence_bpaths),
            },
            seeds: RawSeeds {
                master: Some(self.master_seed),
            },
            output: RawOutput {
                dir: Some(self.out_dir.clone()),
            },
        };
        toml::to_string(&raw).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        let mut p = benchmark_problem(self.d);
        p.horizon = self.horizon;
        p
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::uniform(self.horizon, self.steps)?)
    }

    pub fn corrector(&self) -> Corrector {
        match self.corrector {
            CorrectorKind::Neural => Corrector::Neural(self.train.clone()),
            CorrectorKind::Regression => Corrector::Regression(self.regression.clone()),
        }
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            n_bpaths: self.n_bpaths,
            n_runs: self.n_runs,
            x_eval: self.x_eval.clone(),
            master_seed: self.master_seed,
            identical_runs: false,
        }
    }

    pub fn convergence_config(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            n_list: self.n_list.clone(),
            n_bpaths: self.convergence_bpaths,
            x_eval: self.x_eval.clone(),
            master_seed: self.master_seed,
            level: 0.95,
        }
    }
}
