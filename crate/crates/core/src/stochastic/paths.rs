use rand::Rng;

use super::{fill_standard_normal, RngState, TimeGrid};
use crate::error::{invalid, numeric, Result};
use crate::par::Execution;
use crate::problem::ProblemSpec;

/// Brownian increments: entry `[j, i, m]` of the returned `[count, N, dim]`
/// array is normal with mean 0 and variance `Δt_i`.
pub fn sample_increments<R: Rng + ?Sized>(
    grid: &TimeGrid,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dim == 0 || count == 0 {
        return Err(invalid("increment dimension and count must be positive"));
    }
    Ok(increments_for_steps(grid.steps(), dim, count, rng))
}

pub(crate) fn increments_for_steps<R: Rng + ?Sized>(
    steps: &[f64],
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; count * steps.len() * dim];
    if out.is_empty() {
        return out;
    }
    fill_standard_normal(rng, &mut out);
    for path in out.chunks_exact_mut(steps.len() * dim) {
        for (row, dt) in path.chunks_exact_mut(dim).zip(steps) {
            let s = dt.sqrt();
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Euler–Maruyama over the whole grid. Returns `[batch, N+1, d]`.
pub fn simulate_forward(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    x0: &[f64],
    w: &[f64],
) -> Result<Vec<f64>> {
    simulate_forward_steps(problem, grid, x0, w, grid.len(), Execution::Sequential)
}

/// Euler–Maruyama over the first `n_steps` steps; `w` is `[batch, n_steps, d]`
/// and the result `[batch, n_steps+1, d]`.
pub fn simulate_forward_steps(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    x0: &[f64],
    w: &[f64],
    n_steps: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    let d = problem.d;
    if n_steps > grid.len() {
        return Err(invalid(format!(
            "requested {n_steps} steps on a grid with {}",
            grid.len()
        )));
    }
    if x0.is_empty() || !x0.len().is_multiple_of(d) {
        return Err(invalid(format!(
            "initial states of length {} do not split into rows of dimension {d}",
            x0.len()
        )));
    }
    let batch = x0.len() / d;
    if w.len() != batch * n_steps * d {
        return Err(invalid(format!(
            "expected {} W increments ([{batch}, {n_steps}, {d}]), got {}",
            batch * n_steps * d,
            w.len()
        )));
    }
    let width = (n_steps + 1) * d;
    let mut out = vec![0.0; batch * width];
    exec.for_each_row(&mut out, width, |b, path| {
        path[..d].copy_from_slice(&x0[b * d..(b + 1) * d]);
        let mut drift = vec![0.0; d];
        let mut noise = vec![0.0; d];
        for i in 0..n_steps {
            let (head, tail) = path.split_at_mut((i + 1) * d);
            let dw = &w[(b * n_steps + i) * d..(b * n_steps + i + 1) * d];
            euler_step(
                problem,
                grid.node(i),
                grid.step(i),
                &head[i * d..],
                dw,
                &mut drift,
                &mut noise,
                &mut tail[..d],
            );
        }
    });
    if let Some(step) = first_nonfinite_step(&out, batch, n_steps, d) {
        return Err(numeric("forward Euler coefficients", Some(step)));
    }
    Ok(out)
}

/// One Euler map `x + μ(t,x)Δt + σ(t,x)ΔW`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn euler_step(
    problem: &ProblemSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    dw: &[f64],
    drift: &mut [f64],
    noise: &mut [f64],
    out: &mut [f64],
) {
    problem.drift(t, x, drift);
    problem.diffusion_apply(t, x, dw, noise);
    for j in 0..x.len() {
        out[j] = x[j] + drift[j] * dt + noise[j];
    }
}

fn first_nonfinite_step(paths: &[f64], batch: usize, n_steps: usize, d: usize) -> Option<usize> {
    let width = (n_steps + 1) * d;
    (0..batch)
        .filter_map(|b| {
            paths[b * width..(b + 1) * width]
                .chunks_exact(d)
                .position(|x| x.iter().any(|v| !v.is_finite()))
        })
        // node index k is produced by step k - 1
        .min()
        .map(|node| node.saturating_sub(1))
}

/// A batch of forward paths with their `W` increments and one shared `B` path.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub batch: usize,
    pub d: usize,
    pub l: usize,
    /// `[batch, N+1, d]`
    pub x_paths: Vec<f64>,
    /// `[batch, N, d]`
    pub w_increments: Vec<f64>,
    /// `[N, l]`, common to every trajectory.
    pub b_increments: Vec<f64>,
}

impl PathBundle {
    pub fn simulate(
        problem: &ProblemSpec,
        grid: &TimeGrid,
        batch: usize,
        w_seed: RngState,
        x0_seed: RngState,
        b_increments: Vec<f64>,
    ) -> Result<Self> {
        if batch == 0 {
            return Err(invalid("path bundle needs at least one trajectory"));
        }
        if b_increments.len() != grid.len() * problem.l {
            return Err(invalid(format!(
                "B path has {} entries, expected [{}, {}]",
                b_increments.len(),
                grid.len(),
                problem.l
            )));
        }
        let mut x0 = vec![0.0; batch * problem.d];
        let mut rng = x0_seed.rng();
        for row in x0.chunks_exact_mut(problem.d) {
            problem.sample_x0(&mut rng, row);
        }
        let w_increments = sample_increments(grid, problem.d, batch, &mut w_seed.rng())?;
        let x_paths = simulate_forward(problem, grid, &x0, &w_increments)?;
        Ok(PathBundle {
            grid: grid.clone(),
            batch,
            d: problem.d,
            l: problem.l,
            x_paths,
            w_increments,
            b_increments,
        })
    }

    pub fn x(&self, path: usize, node: usize) -> &[f64] {
        let n = self.grid.len();
        let start = (path * (n + 1) + node) * self.d;
        &self.x_paths[start..start + self.d]
    }

    pub fn dw(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * self.grid.len() + step) * self.d;
        &self.w_increments[start..start + self.d]
    }

    pub fn db(&self, step: usize) -> &[f64] {
        &self.b_increments[step * self.l..(step + 1) * self.l]
    }

    /// `B_T - B_{t_i}`.
    pub fn b_tail(&self, node: usize) -> Vec<f64> {
        b_tail(&self.b_increments, self.l, node)
    }

    /// Recomputes node `step + 1` of `path` from node `step`.
    pub fn replay_step(&self, problem: &ProblemSpec, path: usize, step: usize) -> Vec<f64> {
        let mut drift = vec![0.0; self.d];
        let mut noise = vec![0.0; self.d];
        let mut out = vec![0.0; self.d];
        euler_step(
            problem,
            self.grid.node(step),
            self.grid.step(step),
            self.x(path, step),
            self.dw(path, step),
            &mut drift,
            &mut noise,
            &mut out,
        );
        out
    }
}

/// Sum of the `[N, l]` increments from step `node` onward.
pub(crate) fn b_tail(b_increments: &[f64], l: usize, node: usize) -> Vec<f64> {
    let mut tail = vec![0.0; l];
    for row in b_increments.chunks_exact(l).skip(node) {
        tail.iter_mut().zip(row).for_each(|(t, v)| *t += v);
    }
    tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{benchmark_problem, ProblemSpec};
    use crate::stochastic::Stream;

    fn walk_problem() -> ProblemSpec {
        ProblemSpec::new("walk", 1, 1, 1, 1.0)
    }

    #[test]
    fn increment_moments() {
        let grid = TimeGrid::uniform(0.25, 1).unwrap();
        let n = 1_000_000;
        let w = sample_increments(&grid, 1, n, &mut RngState::new(3, Stream::W).rng()).unwrap();
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4e-3 * 0.25f64.sqrt(), "{mean}");
        assert!((var - 0.25).abs() < 0.01 * 0.25, "{var}");
    }

    #[test]
    fn single_step_shape() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let w = sample_increments(&grid, 3, 1, &mut RngState::new(0, Stream::W).rng()).unwrap();
        assert_eq!(w.len(), 3);
        assert!(sample_increments(&grid, 0, 1, &mut RngState::new(0, Stream::W).rng()).is_err());
    }

    #[test]
    fn zero_dynamics_are_constant() {
        let p = ProblemSpec::new("still", 2, 1, 1, 1.0)
            .with_diffusion(|_, _, _, out| out.fill(0.0));
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let x0 = vec![0.3, -0.7, 1.5, 2.0];
        let w = sample_increments(&grid, 2, 2, &mut RngState::new(1, Stream::W).rng()).unwrap();
        let x = simulate_forward(&p, &grid, &x0, &w).unwrap();
        for b in 0..2 {
            for i in 0..=5 {
                assert_eq!(&x[(b * 6 + i) * 2..(b * 6 + i + 1) * 2], &x0[b * 2..b * 2 + 2]);
            }
        }
    }

    #[test]
    fn identity_diffusion_is_random_walk() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let w = sample_increments(&grid, 1, 1, &mut RngState::new(9, Stream::W).rng()).unwrap();
        let x = simulate_forward(&walk_problem(), &grid, &[0.5], &w).unwrap();
        let mut acc = 0.5;
        for i in 0..8 {
            acc += w[i];
            assert!((x[i + 1] - acc).abs() < 1e-15);
        }
    }

    #[test]
    fn benchmark_one_step_by_hand() {
        let p = benchmark_problem(1);
        let grid = TimeGrid::from_nodes(vec![0.0, 0.25]).unwrap();
        let x = simulate_forward(&p, &grid, &[0.1], &[0.2]).unwrap();
        let expected = 0.1 + 0.25 * 0.1f64.sin() * 0.25 + 0.25 * 0.2;
        assert!((x[1] - expected).abs() < 1e-15);
        assert!((x[1] - (0.1 + 0.006_239_589 + 0.05)).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(simulate_forward(&walk_problem(), &grid, &[0.0], &[0.0; 3]).is_err());
        assert!(simulate_forward(&benchmark_problem(2), &grid, &[0.0; 3], &[0.0; 12]).is_err());
    }

    #[test]
    fn nonfinite_coefficients_report_step() {
        let p = walk_problem().with_drift(|t, _, out| out[0] = if t >= 0.5 { f64::NAN } else { 0.0 });
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        match simulate_forward(&p, &grid, &[0.0], &[0.0; 4]) {
            Err(crate::Error::Numeric { step, .. }) => assert_eq!(step, Some(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let p = benchmark_problem(3);
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let x0 = vec![0.05; 3 * 300];
        let w = sample_increments(&grid, 3, 300, &mut RngState::new(4, Stream::W).rng()).unwrap();
        let a = simulate_forward_steps(&p, &grid, &x0, &w, 16, Execution::Sequential).unwrap();
        let b = simulate_forward_steps(&p, &grid, &x0, &w, 16, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bundle_replay_and_shared_b() {
        let p = benchmark_problem(2);
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let b_inc = sample_increments(&grid, 1, 1, &mut RngState::new(5, Stream::B).rng()).unwrap();
        let bundle = PathBundle::simulate(
            &p,
            &grid,
            10,
            RngState::new(11, Stream::W),
            RngState::new(11, Stream::Shuffle),
            b_inc.clone(),
        )
        .unwrap();
        assert_eq!(bundle.b_increments.len(), 6);
        for path in 0..10 {
            for step in 0..6 {
                assert_eq!(bundle.replay_step(&p, path, step), bundle.x(path, step + 1));
            }
        }
        let again = PathBundle::simulate(
            &p,
            &grid,
            10,
            RngState::new(12, Stream::W),
            RngState::new(11, Stream::Shuffle),
            b_inc.clone(),
        )
        .unwrap();
        assert_eq!(again.b_increments, bundle.b_increments);
        assert_ne!(again.w_increments, bundle.w_increments);
        let total: f64 = b_inc.iter().sum();
        assert_eq!(bundle.b_tail(0)[0], total);
        assert_eq!(bundle.b_tail(6)[0], 0.0);
    }
}
