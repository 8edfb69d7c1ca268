//! Least-squares conditional expectations in place of the trained networks,
//! usable in one or two space dimensions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::ProblemSpec;
use crate::stochastic::{simulate_forward, sample_increments, RngState, Stream, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    /// Total degree of the polynomial basis.
    pub degree: usize,
    pub samples: usize,
    /// Fixed-point passes for the implicit driver term.
    pub picard_passes: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            degree: 5,
            samples: 100_000,
            picard_passes: 1,
        }
    }
}

/// Monomials of total degree at most `degree` in `d` variables, as exponent
/// vectors in graded order.
fn exponents(d: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; d]];
    for total in 1..=degree {
        let mut level = Vec::new();
        compose(d, total, &mut vec![0; d], 0, &mut level);
        out.extend(level);
    }
    out
}

fn compose(d: usize, left: usize, cur: &mut Vec<usize>, pos: usize, out: &mut Vec<Vec<usize>>) {
    if pos == d - 1 {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        compose(d, left - e, cur, pos + 1, out);
    }
}

/// Coefficients of one backward step. Inputs are standardized by `center`
/// and `scale` before the basis is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCoefficients {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[basis, k]`
    pub y: Vec<f64>,
    /// `[basis, k·d]`
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSolution {
    pub grid: TimeGrid,
    pub b_path: Vec<f64>,
    pub d: usize,
    pub k: usize,
    pub degree: usize,
    pub steps: Vec<StepCoefficients>,
}

struct Basis {
    exps: Vec<Vec<usize>>,
    d: usize,
    degree: usize,
}

impl Basis {
    fn new(d: usize, degree: usize) -> Self {
        Basis {
            exps: exponents(d, degree),
            d,
            degree,
        }
    }

    fn len(&self) -> usize {
        self.exps.len()
    }

    fn row(&self, x: &[f64], center: &[f64], scale: &[f64], out: &mut [f64]) {
        let mut powers = vec![vec![1.0; self.degree + 1]; self.d];
        for j in 0..self.d {
            let z = (x[j] - center[j]) / scale[j];
            for p in 1..=self.degree {
                powers[j][p] = powers[j][p - 1] * z;
            }
        }
        for (o, e) in out.iter_mut().zip(&self.exps) {
            *o = e.iter().enumerate().map(|(j, &p)| powers[j][p]).product();
        }
    }
}

impl RegressionSolution {
    /// `U_i` at `points: [m, d]`; `i = N` applies `h`.
    pub fn evaluate(&self, problem: &ProblemSpec, i: usize, points: &[f64]) -> Result<Vec<f64>> {
        if !points.len().is_multiple_of(self.d) {
            return Err(invalid("points are not a multiple of d"));
        }
        if i == self.steps.len() {
            return Ok(problem.terminal_batch(points));
        }
        let s = self
            .steps
            .get(i)
            .ok_or_else(|| invalid(format!("step {i} beyond N = {}", self.steps.len())))?;
        let basis = Basis::new(self.d, self.degree);
        Ok(apply(&basis, s, &s.y, self.k, points))
    }

    pub fn u0(&self, problem: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(problem, 0, x)
    }
}

fn apply(basis: &Basis, s: &StepCoefficients, coef: &[f64], width: usize, points: &[f64]) -> Vec<f64> {
    let nb = basis.len();
    let mut row = vec![0.0; nb];
    let mut out = Vec::with_capacity(points.len() / basis.d * width);
    for x in points.chunks_exact(basis.d) {
        basis.row(x, &s.center, &s.scale, &mut row);
        for c in 0..width {
            out.push((0..nb).map(|j| row[j] * coef[j * width + c]).sum());
        }
    }
    out
}

/// `design · coef` as row-major `[rows, width]`.
fn fitted(design: &DMatrix<f64>, coef: &[f64], width: usize) -> Vec<f64> {
    let c = DMatrix::from_row_slice(design.ncols(), width, coef);
    let v = design * c;
    let mut out = vec![0.0; v.nrows() * width];
    for (p, row) in out.chunks_exact_mut(width).enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = v[(p, j)];
        }
    }
    out
}

/// Least squares through the normal equations. Returns `[basis, width]`.
fn project(design: &DMatrix<f64>, gram: &nalgebra::Cholesky<f64, nalgebra::Dyn>, targets: &[f64], width: usize) -> Vec<f64> {
    let rows = design.nrows();
    let t = DMatrix::from_row_slice(rows, width, targets);
    let rhs = design.transpose() * t;
    let sol = gram.solve(&rhs);
    let nb = design.ncols();
    let mut out = vec![0.0; nb * width];
    for j in 0..nb {
        for c in 0..width {
            out[j * width + c] = sol[(j, c)];
        }
    }
    out
}

/// Backward induction with polynomial regression. At step `i` the pair
/// `(Y_i, Z_i)` minimizes the same residual the networks are trained on,
/// `|Ψ - Z_i ΔW_i + f(t_i, X_i, Y_i, Z_i) Δt - Y_i|²`, over polynomials in
/// `X_i`. The `Z_i ΔW_i` term has conditional mean zero and only removes
/// noise from `Y_i`. The implicit `f` is resolved by Picard passes started
/// from `f = 0`.
pub fn regression_corrector_solve(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    b_path: &[f64],
    config: &RegressionConfig,
    seed: u64,
) -> Result<RegressionSolution> {
    let (d, k, l) = (problem.d, problem.k, problem.l);
    if d > 2 {
        return Err(invalid(format!(
            "the regression corrector supports d <= 2, got d = {d}"
        )));
    }
    if b_path.len() != grid.len() * l {
        return Err(invalid("B path does not match the grid"));
    }
    let basis = Basis::new(d, config.degree);
    let nb = basis.len();
    let m = config.samples;
    if m < 2 * nb {
        return Err(invalid(format!("{m} samples are too few for {nb} basis functions")));
    }
    let n = grid.len();
    let mut x0 = vec![0.0; m * d];
    let mut rng = RngState::new(seed, Stream::Shuffle).rng();
    for row in x0.chunks_exact_mut(d) {
        problem.sample_x0(&mut rng, row);
    }
    let w = sample_increments(grid, d, m, &mut RngState::new(seed, Stream::W).rng())?;
    let paths = simulate_forward(problem, grid, &x0, &w)?;
    let at = |node: usize| -> Vec<f64> {
        paths
            .chunks_exact((n + 1) * d)
            .flat_map(|p| p[node * d..(node + 1) * d].iter().copied())
            .collect()
    };

    let mut steps: Vec<StepCoefficients> = Vec::with_capacity(n);
    let mut x_next = at(n);
    let mut u_next = problem.terminal_batch(&x_next);
    for i in (0..n).rev() {
        let x_i = at(i);
        let (t_i, t_next, dt) = (grid.node(i), grid.node(i + 1), grid.step(i));
        let db = &b_path[i * l..(i + 1) * l];
        let mut psi = vec![0.0; m * k];
        let mut g = vec![0.0; k * l];
        for p in 0..m {
            let (x, u) = (&x_next[p * d..(p + 1) * d], &u_next[p * k..(p + 1) * k]);
            problem.noise(t_next, x, u, &mut g);
            for r in 0..k {
                psi[p * k + r] = u[r] + (0..l).map(|c| g[r * l + c] * db[c]).sum::<f64>();
            }
        }

        let mut center = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for j in 0..d {
            let col: Vec<f64> = x_i.iter().skip(j).step_by(d).copied().collect();
            center[j] = super::stats::mean(&col);
            let s = super::stats::std_dev(&col);
            scale[j] = if s > 0.0 { s } else { 1.0 };
        }
        // Columns φ_j(X_i) followed by φ_j(X_i) ΔW_c / √Δt for each c: the
        // ΔW coefficients give Z_i, and fitting both at once keeps the
        // in-sample noise of Z_i out of Y_i.
        let mut design = DMatrix::zeros(m, nb);
        let mut joint = DMatrix::zeros(m, nb * (1 + d));
        let mut row = vec![0.0; nb];
        let sq = dt.sqrt();
        for p in 0..m {
            basis.row(&x_i[p * d..(p + 1) * d], &center, &scale, &mut row);
            let dw = &w[(p * n + i) * d..(p * n + i + 1) * d];
            for j in 0..nb {
                design[(p, j)] = row[j];
                joint[(p, j)] = row[j];
                for c in 0..d {
                    joint[(p, nb * (1 + c) + j)] = row[j] * dw[c] / sq;
                }
            }
        }
        let gram = (joint.transpose() * &joint)
            .cholesky()
            .filter(|c| {
                let diag = c.l_dirty().diagonal();
                diag.min() > 1e-7 * diag.max()
            })
            .ok_or(Error::RankDeficient { step: i })?;
        let split = |sol: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
            let y = sol[..nb * k].to_vec();
            let mut z = vec![0.0; nb * k * d];
            for j in 0..nb {
                for r in 0..k {
                    for c in 0..d {
                        z[j * k * d + r * d + c] = sol[(nb * (1 + c) + j) * k + r] / sq;
                    }
                }
            }
            (y, z)
        };

        let (mut y, mut z) = split(project(&joint, &gram, &psi, k));
        for _ in 0..config.picard_passes {
            let y_fit = fitted(&design, &y, k);
            let z_fit = fitted(&design, &z, k * d);
            let mut target = psi.clone();
            let mut f = vec![0.0; k];
            for p in 0..m {
                problem.driver(
                    t_i,
                    &x_i[p * d..(p + 1) * d],
                    &y_fit[p * k..(p + 1) * k],
                    &z_fit[p * k * d..(p + 1) * k * d],
                    &mut f,
                );
                for r in 0..k {
                    target[p * k + r] += f[r] * dt;
                }
            }
            (y, z) = split(project(&joint, &gram, &target, k));
        }
        u_next = fitted(&design, &y, k);
        if u_next.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::numeric("regression corrector", Some(i)));
        }
        x_next = x_i;
        steps.push(StepCoefficients { center, scale, y, z });
    }
    steps.reverse();
    Ok(RegressionSolution {
        grid: grid.clone(),
        b_path: b_path.to_vec(),
        d,
        k,
        degree: config.degree,
        steps,
    })
}
