use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::Solved;
use crate::error::{invalid, Result};
use crate::problem::ProblemSpec;
use crate::stochastic::paths::b_tail;
use crate::stochastic::{sample_increments, simulate_forward_steps, RngState, Stream, TimeGrid};
use crate::par::Execution;

/// Approximate and exact solution at simulated states of one time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureData {
    pub step: usize,
    pub t: f64,
    /// `(x̄, approx, exact)` sorted by `x̄ = mean_j x_j`.
    pub rows: Vec<(f64, f64, f64)>,
}

impl FigureData {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,xbar,approx,exact\n");
        for (x, a, e) in &self.rows {
            let _ = writeln!(s, "{},{x},{a},{e}", self.t);
        }
        s
    }

    pub fn mean_absolute_error(&self) -> f64 {
        self.rows.iter().map(|(_, a, e)| (a - e).abs()).sum::<f64>() / self.rows.len() as f64
    }
}

/// Simulates `m` states at node `step` and evaluates both curves there.
pub fn figure_export(
    solution: &Solved<'_>,
    problem: &ProblemSpec,
    step: usize,
    m: usize,
    seed: u64,
) -> Result<FigureData> {
    let (grid, b_path): (&TimeGrid, &[f64]) = match solution {
        Solved::Neural(s) => (&s.grid, &s.b_path),
        Solved::Regression(s) => (&s.grid, &s.b_path),
    };
    if step > grid.len() {
        return Err(invalid(format!("step {step} beyond N = {}", grid.len())));
    }
    if m == 0 {
        return Err(invalid("figure needs at least one point"));
    }
    if !problem.has_exact() {
        return Err(invalid("figure export needs an exact solution"));
    }
    let d = problem.d;
    let mut x0 = vec![0.0; m * d];
    let mut rng = RngState::new(seed, Stream::Shuffle).rng();
    for row in x0.chunks_exact_mut(d) {
        problem.sample_x0(&mut rng, row);
    }
    let w = sample_increments(grid, d, m, &mut RngState::new(seed, Stream::W).rng())?;
    let n = grid.len();
    let w_head: Vec<f64> = w.chunks_exact(n * d).flat_map(|p| p[..step * d].iter().copied()).collect();
    let paths = simulate_forward_steps(problem, grid, &x0, &w_head, step, Execution::Sequential)?;
    let points: Vec<f64> = paths
        .chunks_exact((step + 1) * d)
        .flat_map(|p| p[step * d..].iter().copied())
        .collect();
    let approx = match solution {
        Solved::Neural(s) => s.evaluate(problem, step, &points)?,
        Solved::Regression(s) => s.evaluate(problem, step, &points)?,
    };
    let t = grid.node(step);
    let tail = b_tail(b_path, problem.l, step);
    let k = problem.k;
    let mut rows = Vec::with_capacity(m);
    for (x, a) in points.chunks_exact(d).zip(approx.chunks_exact(k)) {
        let e = problem.exact_solution(t, x, &tail)?[0];
        rows.push((x.iter().sum::<f64>() / d as f64, a[0], e));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(FigureData { step, t, rows })
}
