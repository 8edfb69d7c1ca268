use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::regression::{regression_corrector_solve, RegressionConfig, RegressionSolution};
use super::stats::{mean, relative_l2, std_dev};
use crate::error::{invalid, Result};
use crate::par::Execution;
use crate::problem::ProblemSpec;
use crate::scheme::{solve_with, EpochEvent, SchemeSolution, TrainConfig, TrainObserver};
use crate::stochastic::paths::b_tail;
use crate::stochastic::{mix_seed, sample_increments, RngState, Stream, TimeGrid};

/// How each step's conditional expectation is approximated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corrector {
    Neural(TrainConfig),
    Regression(RegressionConfig),
}

impl Corrector {
    pub fn name(&self) -> &'static str {
        match self {
            Corrector::Neural(_) => "neural",
            Corrector::Regression(_) => "regression",
        }
    }
}

/// A finished solve, handed to [`ReportObserver::solved`].
pub enum Solved<'a> {
    Neural(&'a SchemeSolution),
    Regression(&'a RegressionSolution),
}

impl Solved<'_> {
    pub fn u0(&self, problem: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Solved::Neural(s) => s.u0(problem, x),
            Solved::Regression(s) => s.u0(problem, x),
        }
    }
}

/// Progress hooks. Calls may arrive concurrently from different cells.
pub trait ReportObserver: Sync {
    fn epoch(&self, _bpath: usize, _run: usize, _event: &EpochEvent) {}
    fn solved(&self, _bpath: usize, _run: usize, _solution: &Solved<'_>) {}
    fn cell(&self, _cell: &RunCell) {}
}

pub struct QuietReport;

impl ReportObserver for QuietReport {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub n_bpaths: usize,
    pub n_runs: usize,
    pub x_eval: Vec<f64>,
    pub master_seed: u64,
    /// Use one seed for every run of a B path.
    #[serde(default)]
    pub identical_runs: bool,
}

impl ReportConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_bpaths == 0 {
            return Err(invalid("n_bpaths must be at least 1"));
        }
        if self.n_runs < 2 {
            return Err(invalid("n_runs must be at least 2"));
        }
        if self.x_eval.len() != d {
            return Err(invalid(format!("x_eval has {} entries, expected {d}", self.x_eval.len())));
        }
        Ok(())
    }
}

pub fn bpath_seed(master: u64, bpath: usize) -> u64 {
    mix_seed(master, bpath as u64)
}

/// Seed of run `run` on B path `bpath`; controls `W`, `X_0` and the network
/// initialization.
pub fn run_seed(master: u64, bpath: usize, run: usize, identical: bool) -> u64 {
    let tag = if identical { 0 } else { run as u64 + 1 };
    mix_seed(bpath_seed(master, bpath), tag.wrapping_add(1 << 32))
}

/// The `[N, l]` increments of B path `bpath`.
pub fn sample_bpath(grid: &TimeGrid, l: usize, master: u64, bpath: usize) -> Result<Vec<f64>> {
    let mut rng = RngState::new(bpath_seed(master, bpath), Stream::B).rng();
    sample_increments(grid, l, 1, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCell {
    pub bpath: usize,
    pub run: usize,
    pub seed: u64,
    pub value: Option<f64>,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub bpath: usize,
    pub bpath_seed: u64,
    /// `B_T - B_0`
    pub b_tail: Vec<f64>,
    pub runs: Vec<Option<f64>>,
    pub run_seeds: Vec<u64>,
    pub averaged_approx: f64,
    pub exact_solution: f64,
    pub standard_deviation: f64,
    pub relative_error: f64,
    /// Set when `|exact| < 1e-8` and `relative_error` holds the absolute error.
    pub absolute_error_flag: bool,
    pub failed_runs: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub d: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub corrector: Corrector,
    pub report: ReportConfig,
    pub rows: Vec<ReportRow>,
    pub relative_l2: f64,
    pub failed_runs: usize,
    /// Summed solve time; not part of the serialized report.
    #[serde(skip)]
    pub wall_seconds: f64,
}

pub const CSV_HEADER: &str = "bpath,averaged_approx,exact_solution,standard_deviation,relative_error,failed_runs";

impl RunReport {
    /// Rows in B path order followed by a `relative_l2` footer line whose
    /// value sits in the `relative_error` column.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.bpath, r.averaged_approx, r.exact_solution, r.standard_deviation, r.relative_error, r.failed_runs
            );
        }
        let _ = writeln!(s, "relative_l2,,,,{},{}", self.relative_l2, self.failed_runs);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn is_complete(&self) -> bool {
        self.failed_runs == 0
    }
}

/// Solves every (B path, run) cell and aggregates one row per B path.
/// Failed cells are kept as markers and excluded from the statistics.
pub fn run_report(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    corrector: &Corrector,
    config: &ReportConfig,
    exec: Execution,
    observer: &dyn ReportObserver,
) -> Result<RunReport> {
    config.validate(problem.d)?;
    if !problem.has_exact() {
        return Err(invalid(format!("problem '{}' has no exact solution to report against", problem.name)));
    }
    if let Corrector::Neural(c) = corrector {
        c.validate()?;
    }
    let l = problem.l;
    let bpaths: Vec<Vec<f64>> = (0..config.n_bpaths)
        .map(|b| sample_bpath(grid, l, config.master_seed, b))
        .collect::<Result<_>>()?;
    let cells = exec.map(config.n_bpaths * config.n_runs, |c| {
        let (b, r) = (c / config.n_runs, c % config.n_runs);
        let seed = run_seed(config.master_seed, b, r, config.identical_runs);
        let start = std::time::Instant::now();
        let outcome = solve_cell(problem, grid, &bpaths[b], corrector, seed, b, r, &config.x_eval, observer);
        let cell = RunCell {
            bpath: b,
            run: r,
            seed,
            value: outcome.as_ref().ok().copied(),
            error: outcome.err().map(|e| e.to_string()),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        observer.cell(&cell);
        cell
    });

    let mut rows = Vec::with_capacity(config.n_bpaths);
    for (b, path) in bpaths.iter().enumerate() {
        let mine = &cells[b * config.n_runs..(b + 1) * config.n_runs];
        let tail = b_tail(path, l, 0);
        let exact = problem.exact_solution(0.0, &config.x_eval, &tail)?[0];
        let ok: Vec<f64> = mine.iter().filter_map(|c| c.value).collect();
        let avg = if ok.is_empty() { f64::NAN } else { mean(&ok) };
        let flag = exact.abs() < 1e-8;
        let err = (avg - exact).abs();
        rows.push(ReportRow {
            bpath: b,
            bpath_seed: bpath_seed(config.master_seed, b),
            b_tail: tail,
            runs: mine.iter().map(|c| c.value).collect(),
            run_seeds: mine.iter().map(|c| c.seed).collect(),
            averaged_approx: avg,
            exact_solution: exact,
            standard_deviation: std_dev(&ok),
            relative_error: if flag { err } else { err / exact.abs() },
            absolute_error_flag: flag,
            failed_runs: mine.len() - ok.len(),
            errors: mine.iter().filter_map(|c| c.error.clone()).collect(),
        });
    }
    let (approx, exact): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.averaged_approx.is_finite())
        .map(|r| (r.averaged_approx, r.exact_solution))
        .unzip();
    let relative = if approx.is_empty() { f64::NAN } else { relative_l2(&approx, &exact) };
    Ok(RunReport {
        problem: problem.name.clone(),
        d: problem.d,
        n_steps: grid.len(),
        horizon: grid.horizon(),
        corrector: corrector.clone(),
        report: config.clone(),
        failed_runs: rows.iter().map(|r| r.failed_runs).sum(),
        rows,
        relative_l2: relative,
        wall_seconds: cells.iter().map(|c| c.wall_seconds).sum(),
    })
}

struct CellObserver<'a> {
    inner: &'a dyn ReportObserver,
    bpath: usize,
    run: usize,
}

impl TrainObserver for CellObserver<'_> {
    fn epoch(&self, event: &EpochEvent) {
        self.inner.epoch(self.bpath, self.run, event);
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_cell(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    path: &[f64],
    corrector: &Corrector,
    seed: u64,
    bpath: usize,
    run: usize,
    x_eval: &[f64],
    observer: &dyn ReportObserver,
) -> Result<f64> {
    let value = match corrector {
        Corrector::Neural(c) => {
            let obs = CellObserver {
                inner: observer,
                bpath,
                run,
            };
            let sol = solve_with(problem, grid, path, c, seed, &obs)?;
            let solved = Solved::Neural(&sol);
            observer.solved(bpath, run, &solved);
            solved.u0(problem, x_eval)?[0]
        }
        Corrector::Regression(c) => {
            let sol = regression_corrector_solve(problem, grid, path, c, seed)?;
            let solved = Solved::Regression(&sol);
            observer.solved(bpath, run, &solved);
            solved.u0(problem, x_eval)?[0]
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(crate::error::numeric("U_0(x_eval)", Some(0)))
    }
}
