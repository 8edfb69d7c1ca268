//! SPDE problem definitions.
//!
//! A [`ProblemSpec`] bundles the coefficients of the backward SPDE
//! `u(t,x) = h(x) + ∫_t^T (L u + f(s, x, u, ∇u σ)) ds + ∫_t^T g(s, x, u) dB_s`
//! together with the law of the initial state and an optional closed-form
//! solution. Coefficients are plain closures over slices so custom problems
//! can be assembled with the `with_*` builders.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{invalid, Result};

pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Writes `σ(t, x) · v` into the output slice.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `f(t, x, y, z)` with `y ∈ R^k` and `z ∈ R^{k×d}` row-major.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes `∂f/∂y` (`[k, k]`) and `∂f/∂z` (`[k, k·d]`).
pub type DriverJacobianFn =
    Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync>;
/// `g(t, x, y)` as a row-major `[k, l]` matrix.
pub type NoiseFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;
/// `u(t, x)` given `B_T - B_t`.
pub type ExactFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Noise level `σ̄` of the benchmark problem.
pub const BENCHMARK_NOISE_LEVEL: f64 = 0.25;

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    /// State dimension.
    pub d: usize,
    /// Solution dimension.
    pub k: usize,
    /// Dimension of `B`.
    pub l: usize,
    pub horizon: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
    driver: DriverFn,
    driver_jacobian: Option<DriverJacobianFn>,
    noise: NoiseFn,
    terminal: TerminalFn,
    x0_sampler: SamplerFn,
    exact: Option<ExactFn>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("k", &self.k)
            .field("l", &self.l)
            .field("horizon", &self.horizon)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    /// Zero drift, identity diffusion, `f = g = h = 0`, and `X_0` uniform on
    /// `(-0.2, 0.2)^d`.
    pub fn new(name: impl Into<String>, d: usize, k: usize, l: usize, horizon: f64) -> Self {
        assert!(d >= 1 && k >= 1 && l >= 1, "dimensions must be positive");
        ProblemSpec {
            name: name.into(),
            d,
            k,
            l,
            horizon,
            drift: Arc::new(|_, _, out| out.fill(0.0)),
            diffusion: Arc::new(|_, _, v, out| out.copy_from_slice(v)),
            driver: Arc::new(|_, _, _, _, out| out.fill(0.0)),
            driver_jacobian: Some(Arc::new(|_, _, _, _, jy, jz| {
                jy.fill(0.0);
                jz.fill(0.0);
            })),
            noise: Arc::new(|_, _, _, out| out.fill(0.0)),
            terminal: Arc::new(|_, out| out.fill(0.0)),
            x0_sampler: Arc::new(uniform_box_sampler(0.2)),
            exact: None,
        }
    }

    pub fn with_drift(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    /// Sets the driver; its Jacobian falls back to central differences.
    pub fn with_driver(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.driver = Arc::new(f);
        self.driver_jacobian = None;
        self
    }

    pub fn with_driver_jacobian(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.driver_jacobian = Some(Arc::new(f));
        self
    }

    pub fn with_noise(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.noise = Arc::new(f);
        self
    }

    pub fn with_terminal(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(f);
        self
    }

    pub fn with_x0_sampler(
        mut self,
        f: impl Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.x0_sampler = Arc::new(f);
        self
    }

    pub fn with_exact(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.exact = Some(Arc::new(f));
        self
    }

    pub fn without_exact(mut self) -> Self {
        self.exact = None;
        self
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    #[inline]
    pub fn diffusion_apply(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, v, out)
    }

    /// Dense `[d, d]` diffusion matrix, column by column.
    pub fn diffusion_matrix(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut m = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            self.diffusion_apply(t, x, &e, &mut col);
            for i in 0..d {
                m[i * d + j] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    #[inline]
    pub fn driver(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.driver)(t, x, y, z, out)
    }

    /// Value of `f` plus its partial derivatives in `y` and `z`.
    pub fn driver_with_jacobian(
        &self,
        t: f64,
        x: &[f64],
        y: &[f64],
        z: &[f64],
        out: &mut [f64],
        jy: &mut [f64],
        jz: &mut [f64],
    ) {
        self.driver(t, x, y, z, out);
        match &self.driver_jacobian {
            Some(jac) => jac(t, x, y, z, jy, jz),
            None => self.driver_jacobian_fd(t, x, y, z, jy, jz),
        }
    }

    fn driver_jacobian_fd(
        &self,
        t: f64,
        x: &[f64],
        y: &[f64],
        z: &[f64],
        jy: &mut [f64],
        jz: &mut [f64],
    ) {
        let k = self.k;
        let kd = z.len();
        let mut yp = y.to_vec();
        let mut zp = z.to_vec();
        let mut plus = vec![0.0; k];
        let mut minus = vec![0.0; k];
        for c in 0..k {
            let h = 1e-6 * (1.0 + y[c].abs());
            yp[c] = y[c] + h;
            self.driver(t, x, &yp, z, &mut plus);
            yp[c] = y[c] - h;
            self.driver(t, x, &yp, z, &mut minus);
            yp[c] = y[c];
            for r in 0..k {
                jy[r * k + c] = (plus[r] - minus[r]) / (2.0 * h);
            }
        }
        for c in 0..kd {
            let h = 1e-6 * (1.0 + z[c].abs());
            zp[c] = z[c] + h;
            self.driver(t, x, y, &zp, &mut plus);
            zp[c] = z[c] - h;
            self.driver(t, x, y, &zp, &mut minus);
            zp[c] = z[c];
            for r in 0..k {
                jz[r * kd + c] = (plus[r] - minus[r]) / (2.0 * h);
            }
        }
    }

    #[inline]
    pub fn noise(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.noise)(t, x, y, out)
    }

    #[inline]
    pub fn terminal(&self, x: &[f64], out: &mut [f64]) {
        (self.terminal)(x, out)
    }

    pub fn sample_x0(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        (self.x0_sampler)(rng, out)
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Closed-form `u(t, x)` given `B_T - B_t`.
    pub fn exact_solution(&self, t: f64, x: &[f64], b_tail: &[f64]) -> Result<Vec<f64>> {
        let exact = self
            .exact
            .as_ref()
            .ok_or_else(|| invalid(format!("problem '{}' has no exact solution", self.name)))?;
        if !(0.0..=self.horizon).contains(&t) {
            return Err(invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        if x.len() != self.d || b_tail.len() != self.l {
            return Err(invalid("exact solution argument has wrong dimension"));
        }
        let mut out = vec![0.0; self.k];
        exact(t, x, b_tail, &mut out);
        Ok(out)
    }

    /// Terminal values for a `[m, d]` batch.
    pub fn terminal_batch(&self, points: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; points.len() / self.d * self.k];
        for (x, o) in points.chunks_exact(self.d).zip(out.chunks_exact_mut(self.k)) {
            self.terminal(x, o);
        }
        out
    }
}

/// `X_0` componentwise uniform on `(-half_width, half_width)`.
pub fn uniform_box_sampler(half_width: f64) -> impl Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync {
    move |rng, out| {
        for v in out.iter_mut() {
            *v = rng.random_range(-half_width..half_width);
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `√d · arctan(mean(x)) + (π/2)√d`.
pub fn benchmark_terminal(x: &[f64]) -> f64 {
    let sd = (x.len() as f64).sqrt();
    sd * mean(x).atan() + FRAC_PI_2 * sd
}

/// `√d · arctan(mean(x) - σ̄ (B_T - B_t)) + (π/2)√d`.
pub fn benchmark_exact(x: &[f64], b_tail: f64) -> f64 {
    let sd = (x.len() as f64).sqrt();
    sd * (mean(x) - BENCHMARK_NOISE_LEVEL * b_tail).atan() + FRAC_PI_2 * sd
}

/// The test problem with `k = l = 1`, `T = 1`, noise level `σ̄ = 0.25`:
/// drift `σ̄√d sin(x)`, diffusion `σ̄√d I`, driver `-σ̄ sin(x)·∇u`,
/// `g = -σ̄√d sin²(u/√d)`.
///
/// The driver is supplied in `z`-coordinates. With `z = ∇u σ = σ̄√d ∇u` it
/// reads `f(t, x, y, z) = -(1/√d) Σ_j sin(x_j) z_j`.
pub fn benchmark_problem(d: usize) -> ProblemSpec {
    assert!(d >= 1, "dimension must be positive");
    let s = BENCHMARK_NOISE_LEVEL;
    let sd = (d as f64).sqrt();
    let scale = s * sd;
    ProblemSpec::new("benchmark", d, 1, 1, 1.0)
        .with_drift(move |_, x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = scale * xi.sin();
            }
        })
        .with_diffusion(move |_, _, v, out| {
            for (o, vi) in out.iter_mut().zip(v) {
                *o = scale * vi;
            }
        })
        .with_driver(move |_, x, _, z, out| {
            let dot: f64 = x.iter().zip(z).map(|(xi, zi)| xi.sin() * zi).sum();
            out[0] = -dot / sd;
        })
        .with_driver_jacobian(move |_, x, _, _, jy, jz| {
            jy[0] = 0.0;
            for (j, xi) in jz.iter_mut().zip(x) {
                *j = -xi.sin() / sd;
            }
        })
        .with_noise(move |_, _, y, out| {
            let v = (y[0] / sd).sin();
            out[0] = -scale * v * v;
        })
        .with_terminal(|x, out| out[0] = benchmark_terminal(x))
        .with_x0_sampler(uniform_box_sampler(0.2))
        .with_exact(|_, x, b_tail, out| out[0] = benchmark_exact(x, b_tail[0]))
}
