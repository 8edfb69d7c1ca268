use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde_json::json;
use spde_core::analysis::{
    convergence_study, figure_export, regression_corrector_solve, run_report, run_seed, sample_bpath,
    synthetic_slope, ConvergenceReport, ReportObserver, RunCell, RunReport, Solved,
};
use spde_core::scheme::{solve, EpochEvent, SchemeSolution};
use spde_core::stochastic::mix_seed;
use spde_core::Execution;

use crate::{CliError, CorrectorKind, ExperimentConfig};

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct Options {
    pub workers: usize,
    /// Suppress the per-epoch progress lines on standard error.
    pub quiet: bool,
    /// Write per-run network checkpoints.
    pub checkpoints: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            workers: 1,
            quiet: false,
            checkpoints: true,
        }
    }
}

/// Seed and output overrides: flags win over `SPDE_SEED` / `SPDE_OUT`,
/// which win over the file.
pub fn apply_overrides(
    config: &mut ExperimentConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    env: impl Fn(&str) -> Option<String>,
) -> Result<(), CliError> {
    if let Some(s) = env("SPDE_SEED") {
        config.master_seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("SPDE_SEED is not an unsigned integer: '{s}'")))?;
    }
    if let Some(o) = env("SPDE_OUT") {
        config.out_dir = PathBuf::from(o);
    }
    if let Some(s) = seed {
        config.master_seed = s;
    }
    if let Some(o) = out {
        config.out_dir = o;
    }
    Ok(())
}

struct Logger {
    log: Mutex<BufWriter<File>>,
    checkpoint_dir: Option<PathBuf>,
    quiet: bool,
    failures: Mutex<Vec<String>>,
}

impl Logger {
    fn new(out: &Path, name: &str, checkpoints: bool, quiet: bool) -> Result<Self, CliError> {
        let file = File::create(out.join(name))?;
        Ok(Logger {
            log: Mutex::new(BufWriter::new(file)),
            checkpoint_dir: checkpoints.then(|| out.join("checkpoints")),
            quiet,
            failures: Mutex::new(Vec::new()),
        })
    }

    fn line(&self, value: serde_json::Value) {
        let mut log = self.log.lock().expect("log lock");
        if let Err(e) = writeln!(log, "{value}") {
            self.failures.lock().expect("failure lock").push(e.to_string());
        }
    }

    fn finish(self) -> Result<(), CliError> {
        self.log.into_inner().expect("log lock").flush()?;
        let failures = self.failures.into_inner().expect("failure lock");
        match failures.first() {
            Some(f) => Err(CliError::Io(f.clone())),
            None => Ok(()),
        }
    }
}

impl ReportObserver for Logger {
    fn epoch(&self, bpath: usize, run: usize, e: &EpochEvent) {
        if !self.quiet {
            eprintln!(
                "bpath {bpath} run {run} step {} epoch {} loss {:.6e} rate {:.3e}",
                e.step, e.epoch, e.loss, e.rate
            );
        }
        self.line(json!({
            "event": "epoch", "bpath": bpath, "run": run, "step": e.step,
            "epoch": e.epoch, "loss": e.loss, "rate": e.rate,
        }));
    }

    fn solved(&self, bpath: usize, run: usize, solution: &Solved<'_>) {
        let Some(root) = &self.checkpoint_dir else { return };
        let dir = root.join(format!("bpath_{bpath:03}")).join(format!("run_{run:03}"));
        let result = match solution {
            Solved::Neural(s) => s.save(&dir).map_err(|e| e.to_string()),
            Solved::Regression(s) => fs::create_dir_all(&dir)
                .map_err(|e| e.to_string())
                .and_then(|_| serde_json::to_string(s).map_err(|e| e.to_string()))
                .and_then(|t| fs::write(dir.join("regression.json"), t).map_err(|e| e.to_string())),
        };
        if let Err(e) = result {
            self.failures.lock().expect("failure lock").push(format!("{}: {e}", dir.display()));
        }
    }

    fn cell(&self, c: &RunCell) {
        if !self.quiet {
            match (&c.value, &c.error) {
                (Some(v), _) => eprintln!("bpath {} run {} U_0 = {v}", c.bpath, c.run),
                (_, Some(e)) => eprintln!("bpath {} run {} failed: {e}", c.bpath, c.run),
                _ => {}
            }
        }
        self.line(json!({
            "event": "cell", "bpath": c.bpath, "run": c.run, "seed": c.seed,
            "value": c.value, "error": c.error,
        }));
    }
}

fn prepare_out(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let out = config.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    Ok(out)
}

/// Repeated-run report: writes `report.csv`, `report.json`, `manifest.json`,
/// `log.jsonl` and per-run checkpoints. Returns the report even when some
/// runs failed; the caller maps failures to the exit status.
pub fn cmd_run(config: &ExperimentConfig, opts: &Options) -> Result<RunReport, CliError> {
    let out = prepare_out(config)?;
    let exec = Execution::init_workers(opts.workers);
    let problem = config.problem_spec();
    let grid = config.grid()?;
    let logger = Logger::new(&out, "log.jsonl", opts.checkpoints, opts.quiet)?;
    let start = Instant::now();
    let report = run_report(&problem, &grid, &config.corrector(), &config.report_config(), exec, &logger)?;
    let wall = start.elapsed().as_secs_f64();
    logger.finish()?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("report.json"), report.to_json()?)?;
    let manifest = json!({
        "command": "run",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config.hash(),
        "master_seed": config.master_seed,
        "bpath_seeds": report.rows.iter().map(|r| r.bpath_seed).collect::<Vec<_>>(),
        "run_seeds": report.rows.iter().map(|r| r.run_seeds.clone()).collect::<Vec<_>>(),
        "workers": opts.workers,
        "wall_clock_seconds": wall,
        "solve_seconds": report.wall_seconds,
        "relative_l2": report.relative_l2,
        "failed_runs": report.failed_runs,
    });
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(report)
}

pub fn cmd_convergence(config: &ExperimentConfig, opts: &Options) -> Result<ConvergenceReport, CliError> {
    if config.n_list.len() < 3 {
        return Err(CliError::Config("convergence.n_list needs at least three entries".into()));
    }
    let out = prepare_out(config)?;
    let exec = Execution::init_workers(opts.workers);
    let problem = config.problem_spec();
    let logger = Logger::new(&out, "convergence_log.jsonl", false, opts.quiet)?;
    let start = Instant::now();
    let report = convergence_study(&problem, &config.corrector(), &config.convergence_config(), exec, &logger)?;
    let wall = start.elapsed().as_secs_f64();
    logger.finish()?;
    fs::write(out.join("convergence.csv"), report.to_csv())?;
    fs::write(out.join("convergence.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let manifest = json!({
        "command": "convergence",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config.hash(),
        "master_seed": config.master_seed,
        "workers": opts.workers,
        "wall_clock_seconds": wall,
        "slope": report.fit.map(|f| f.slope),
    });
    fs::write(out.join("convergence_manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(report)
}

/// Slope fitted to the synthetic errors `c / N` over the configured list.
pub fn selftest_slope(config: &ExperimentConfig) -> Result<f64, CliError> {
    Ok(synthetic_slope(&config.n_list, config.horizon, 1.0)?.slope)
}

/// Writes `figure_step_XXX.csv` for `step`. Uses the solution in
/// `solution_dir` when given, otherwise solves B path 0, run 0.
pub fn cmd_figure(
    config: &ExperimentConfig,
    step: usize,
    solution_dir: Option<&Path>,
    opts: &Options,
) -> Result<PathBuf, CliError> {
    if step > config.steps {
        return Err(CliError::Config(format!("step {step} is outside 0..={}", config.steps)));
    }
    let problem = config.problem_spec();
    let grid = config.grid()?;
    let neural;
    let regression;
    let solved = match (solution_dir, config.corrector) {
        (Some(dir), _) => {
            if !dir.join("manifest.json").is_file() {
                return Err(CliError::Io(format!("no solution found at {}", dir.display())));
            }
            neural = SchemeSolution::load(dir)?;
            if neural.grid.len() != config.steps || neural.d != config.d {
                return Err(CliError::Config(format!(
                    "solution at {} does not match the configured grid or dimension",
                    dir.display()
                )));
            }
            Solved::Neural(&neural)
        }
        (None, kind) => {
            let path = sample_bpath(&grid, problem.l, config.master_seed, 0)?;
            let seed = run_seed(config.master_seed, 0, 0, false);
            let _ = Execution::init_workers(opts.workers);
            match kind {
                CorrectorKind::Neural => {
                    neural = solve(&problem, &grid, &path, &config.train, seed)?;
                    Solved::Neural(&neural)
                }
                CorrectorKind::Regression => {
                    regression = regression_corrector_solve(&problem, &grid, &path, &config.regression, seed)?;
                    Solved::Regression(&regression)
                }
            }
        }
    };
    let out = prepare_out(config)?;
    let data = figure_export(
        &solved,
        &problem,
        step,
        config.train.eval_samples,
        mix_seed(config.master_seed, 0xF1_6E),
    )?;
    let file = out.join(format!("figure_step_{step:03}.csv"));
    fs::write(&file, data.to_csv())?;
    Ok(file)
}
