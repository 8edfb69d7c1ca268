use serde::{Deserialize, Serialize};

use super::regression::regression_corrector_solve;
use super::report::{run_seed, sample_bpath, Corrector, ReportObserver, Solved};
use super::stats::{fit_line, mean, standard_error, LineFit};
use crate::error::{invalid, Result};
use crate::par::Execution;
use crate::problem::ProblemSpec;
use crate::scheme::solve;
use crate::stochastic::paths::b_tail;
use crate::stochastic::{mix_seed, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub n_list: Vec<usize>,
    pub n_bpaths: usize,
    pub x_eval: Vec<f64>,
    pub master_seed: u64,
    /// Confidence level of the slope interval.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub n: usize,
    pub mesh: f64,
    pub mse: f64,
    pub mse_stderr: f64,
    /// Mean signed error `U_0 - u` and its standard error.
    pub mean_error: f64,
    pub error_stderr: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub corrector: String,
    pub entries: Vec<ConvergenceEntry>,
    /// Slope of `log MSE` against `log |π|`; absent when an MSE is not
    /// positive and finite.
    pub fit: Option<LineFit>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,mesh,mse,mse_stderr,mean_error,error_stderr,failed\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.n, e.mesh, e.mse, e.mse_stderr, e.mean_error, e.error_stderr, e.failed
            ));
        }
        s
    }
}

fn validate_n_list(n_list: &[usize]) -> Result<()> {
    if n_list.len() < 3 {
        return Err(invalid("a convergence study needs at least three step counts"));
    }
    if n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("step counts must be positive and strictly increasing"));
    }
    Ok(())
}

/// B increments on the `n`-step grid. When `n` divides the finest count the
/// path is the coarsening of the finest one, so every `N` sees the same `B`.
fn nested_bpath(horizon: f64, n: usize, n_max: usize, l: usize, master: u64, b: usize) -> Result<Vec<f64>> {
    if n_max.is_multiple_of(n) {
        let fine = sample_bpath(&TimeGrid::uniform(horizon, n_max)?, l, master, b)?;
        let r = n_max / n;
        let mut out = vec![0.0; n * l];
        for (i, row) in fine.chunks_exact(l).enumerate() {
            for c in 0..l {
                out[(i / r) * l + c] += row[c];
            }
        }
        Ok(out)
    } else {
        sample_bpath(&TimeGrid::uniform(horizon, n)?, l, mix_seed(master, n as u64), b)
    }
}

/// Squared error of `U_0(x_eval)` against the exact solution, averaged over
/// B paths, for each grid in `n_list`.
pub fn convergence_study(
    problem: &ProblemSpec,
    corrector: &Corrector,
    config: &ConvergenceConfig,
    exec: Execution,
    observer: &dyn ReportObserver,
) -> Result<ConvergenceReport> {
    validate_n_list(&config.n_list)?;
    if config.n_bpaths < 2 {
        return Err(invalid("a convergence study needs at least two B paths"));
    }
    if config.x_eval.len() != problem.d {
        return Err(invalid("x_eval does not match the problem dimension"));
    }
    if !problem.has_exact() {
        return Err(invalid("a convergence study needs an exact solution"));
    }
    match corrector {
        Corrector::Regression(_) if problem.d > 2 => {
            return Err(invalid(format!(
                "the regression corrector supports d <= 2, got d = {}",
                problem.d
            )))
        }
        Corrector::Neural(c) => c.validate()?,
        _ => {}
    }
    let (horizon, l) = (problem.horizon, problem.l);
    let n_max = *config.n_list.last().expect("validated");
    let nb = config.n_bpaths;
    let errors = exec.map(config.n_list.len() * nb, |c| -> Result<f64> {
        let (ni, b) = (c / nb, c % nb);
        let n = config.n_list[ni];
        let grid = TimeGrid::uniform(horizon, n)?;
        let path = nested_bpath(horizon, n, n_max, l, config.master_seed, b)?;
        let seed = mix_seed(run_seed(config.master_seed, b, 0, false), n as u64);
        let approx = match corrector {
            Corrector::Neural(tc) => {
                let sol = solve(problem, &grid, &path, tc, seed)?;
                observer.solved(b, ni, &Solved::Neural(&sol));
                sol.u0(problem, &config.x_eval)?[0]
            }
            Corrector::Regression(rc) => {
                let sol = regression_corrector_solve(problem, &grid, &path, rc, seed)?;
                observer.solved(b, ni, &Solved::Regression(&sol));
                sol.u0(problem, &config.x_eval)?[0]
            }
        };
        let exact = problem.exact_solution(0.0, &config.x_eval, &b_tail(&path, l, 0))?[0];
        Ok(approx - exact)
    });
    let mut entries = Vec::with_capacity(config.n_list.len());
    for (ni, &n) in config.n_list.iter().enumerate() {
        let mine = &errors[ni * nb..(ni + 1) * nb];
        let ok: Vec<f64> = mine.iter().filter_map(|e| e.as_ref().ok().copied()).collect();
        let sq: Vec<f64> = ok.iter().map(|e| e * e).collect();
        let (mse, mse_stderr, mean_error, error_stderr) = if ok.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            (mean(&sq), standard_error(&sq), mean(&ok), standard_error(&ok))
        };
        entries.push(ConvergenceEntry {
            n,
            mesh: horizon / n as f64,
            mse,
            mse_stderr,
            mean_error,
            error_stderr,
            failed: mine.len() - ok.len(),
        });
    }
    let fit = slope_of(&entries, config.level);
    Ok(ConvergenceReport {
        corrector: corrector.name().to_string(),
        entries,
        fit,
    })
}

fn slope_of(entries: &[ConvergenceEntry], level: f64) -> Option<LineFit> {
    if entries.iter().any(|e| !(e.mse > 0.0 && e.mse.is_finite())) {
        return None;
    }
    let x: Vec<f64> = entries.iter().map(|e| e.mesh.ln()).collect();
    let y: Vec<f64> = entries.iter().map(|e| e.mse.ln()).collect();
    fit_line(&x, &y, level).ok()
}

/// Fitted slope for the synthetic errors `MSE(N) = c / N`; exactly 1.
pub fn synthetic_slope(n_list: &[usize], horizon: f64, c: f64) -> Result<LineFit> {
    validate_n_list(n_list)?;
    let entries: Vec<ConvergenceEntry> = n_list
        .iter()
        .map(|&n| ConvergenceEntry {
            n,
            mesh: horizon / n as f64,
            mse: c / n as f64,
            mse_stderr: 0.0,
            mean_error: 0.0,
            error_stderr: 0.0,
            failed: 0,
        })
        .collect();
    slope_of(&entries, 0.95).ok_or_else(|| invalid("synthetic errors must be positive"))
}
