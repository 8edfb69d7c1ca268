//! Finite-difference check of the step loss gradients.
//!
//! Central differences of an `f64` loss of order one carry a rounding error
//! of about `ε L / h ≈ 1e-10`, too coarse to resolve small gradients to a
//! relative `1e-4`. The differences are therefore taken of a separate
//! double-double implementation of the same loss, which shares no code with
//! the tape.
//!
//! The driver exists only in `f64`. It is evaluated once at the unperturbed
//! network outputs and extended to first order in double-double, so both
//! sides of a difference see the same rounding. The quadratic remainder is
//! even in the perturbation and cancels in the central difference.

use rand::Rng;
use twofloat::TwoFloat;

use crate::error::Result;
use crate::nn::{FeedforwardNet, Tape};
use crate::problem::ProblemSpec;
use crate::stochastic::{fill_standard_normal, RngState, Stream, TimeGrid};

use super::train::{sample_step_batch, step_objective, NextValue, StepBatch};
use super::TrainConfig;

/// Outcome of comparing tape gradients of the step loss with central
/// finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Parameters whose analytic gradient exceeded the magnitude floor.
    pub checked: usize,
    /// Parameters compared but below the floor.
    pub below_floor: usize,
    pub max_relative_error: f64,
    /// Where the largest relative error occurred.
    pub worst: Option<WorstEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstEntry {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckConfig {
    pub rows: usize,
    /// Central difference half-width.
    pub h: f64,
    /// Gradients at or below this magnitude are not compared.
    pub floor: f64,
    /// Entries checked per parameter block; `None` checks every entry.
    pub per_block: Option<usize>,
    /// Standard deviation of the noise added to every parameter so biases,
    /// scales and shifts are away from their initial values.
    pub jitter: f64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            rows: 16,
            h: 1e-6,
            floor: 1e-8,
            per_block: None,
            jitter: 0.1,
        }
    }
}

/// `a / b` to double-double accuracy; the crate's own quotient of two
/// double-doubles is only good to `f64` precision.
fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q = a / b;
    q + (a - q * b) / b.hi()
}

/// Network parameters in double-double, blocks in
/// [`FeedforwardNet::param_blocks`] order.
#[derive(Clone)]
struct ReferenceNet {
    sizes: Vec<usize>,
    blocks: Vec<Vec<TwoFloat>>,
    batch_norm: bool,
    eps: f64,
    slope: f64,
}

impl ReferenceNet {
    fn new(net: &FeedforwardNet) -> Self {
        let arch = net.architecture();
        ReferenceNet {
            sizes: arch.layer_sizes(),
            blocks: net
                .param_blocks()
                .iter()
                .map(|b| b.iter().map(|&v| TwoFloat::from(v)).collect())
                .collect(),
            batch_norm: arch.batch_norm,
            eps: arch.bn_eps,
            slope: arch.leaky_slope,
        }
    }

    /// Training-mode forward pass on `x: [rows, n_0]`.
    fn forward(&self, x: &[f64], rows: usize) -> Vec<TwoFloat> {
        let mut h: Vec<TwoFloat> = x.iter().map(|&v| TwoFloat::from(v)).collect();
        let layers = self.sizes.len() - 1;
        let mut bi = 0;
        for l in 0..layers {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (&self.blocks[bi], &self.blocks[bi + 1]);
            bi += 2;
            let mut y = vec![TwoFloat::from(0.0); rows * out];
            for r in 0..rows {
                for o in 0..out {
                    let mut acc = b[o];
                    for i in 0..inp {
                        acc += w[o * inp + i] * h[r * inp + i];
                    }
                    y[r * out + o] = acc;
                }
            }
            h = y;
            if l == layers - 1 {
                break;
            }
            if self.batch_norm {
                let (g, be) = (&self.blocks[bi], &self.blocks[bi + 1]);
                bi += 2;
                let n = rows as f64;
                for o in 0..out {
                    let mut mean = TwoFloat::from(0.0);
                    for r in 0..rows {
                        mean += h[r * out + o];
                    }
                    mean /= n;
                    let mut var = TwoFloat::from(0.0);
                    for r in 0..rows {
                        let c = h[r * out + o] - mean;
                        var += c * c;
                    }
                    let std = (var / n + self.eps).sqrt();
                    for r in 0..rows {
                        let v = &mut h[r * out + o];
                        *v = g[o] * div(*v - mean, std) + be[o];
                    }
                }
            }
            for v in h.iter_mut() {
                if v.hi() < 0.0 {
                    *v *= self.slope;
                }
            }
        }
        h
    }
}

/// First-order expansion of the driver around fixed outputs, per row.
struct DriverExpansion {
    y: Vec<f64>,
    z: Vec<f64>,
    f: Vec<f64>,
    jy: Vec<f64>,
    jz: Vec<f64>,
}

impl DriverExpansion {
    fn new(problem: &ProblemSpec, u: &ReferenceNet, v: &ReferenceNet, batch: &StepBatch, t: f64) -> Self {
        let (d, k, rows) = (problem.d, problem.k, batch.rows);
        let y: Vec<f64> = u.forward(&batch.x, rows).iter().map(|a| a.hi()).collect();
        let z: Vec<f64> = v.forward(&batch.x, rows).iter().map(|a| a.hi()).collect();
        let mut f = vec![0.0; rows * k];
        let mut jy = vec![0.0; rows * k * k];
        let mut jz = vec![0.0; rows * k * k * d];
        for r in 0..rows {
            problem.driver_with_jacobian(
                t,
                &batch.x[r * d..(r + 1) * d],
                &y[r * k..(r + 1) * k],
                &z[r * k * d..(r + 1) * k * d],
                &mut f[r * k..(r + 1) * k],
                &mut jy[r * k * k..(r + 1) * k * k],
                &mut jz[r * k * k * d..(r + 1) * k * k * d],
            );
        }
        DriverExpansion { y, z, f, jy, jz }
    }
}

/// The step loss in double-double, with the driver taken from `base`.
fn reference_loss(
    problem: &ProblemSpec,
    u: &ReferenceNet,
    v: &ReferenceNet,
    batch: &StepBatch,
    base: &DriverExpansion,
    dt: f64,
) -> TwoFloat {
    let (d, k) = (problem.d, problem.k);
    let (kd, rows) = (k * d, batch.rows);
    let uo = u.forward(&batch.x, rows);
    let vo = v.forward(&batch.x, rows);
    let mut total = TwoFloat::from(0.0);
    for r in 0..rows {
        let y = &uo[r * k..(r + 1) * k];
        let z = &vo[r * kd..(r + 1) * kd];
        let dw = &batch.dw[r * d..(r + 1) * d];
        for c in 0..k {
            let mut fc = TwoFloat::from(base.f[r * k + c]);
            for j in 0..k {
                fc += base.jy[(r * k + c) * k + j] * (y[j] - base.y[r * k + j]);
            }
            for j in 0..kd {
                fc += base.jz[(r * k + c) * kd + j] * (z[j] - base.z[r * kd + j]);
            }
            let mut res = TwoFloat::from(batch.psi[r * k + c]) - y[c] + fc * dt;
            for j in 0..d {
                res -= z[c * d + j] * dw[j];
            }
            total += res * res;
        }
    }
    total / rows as f64
}

/// Checks the full step loss of the last step, with the terminal rule as
/// the next value, for freshly initialized and jittered networks of
/// `config`'s architecture.
pub fn check_step_gradients(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    b_path: &[f64],
    config: &TrainConfig,
    check: &GradientCheckConfig,
    seed: u64,
) -> Result<GradientCheck> {
    let (d, k) = (problem.d, problem.k);
    let step = grid.len() - 1;
    let mut rng = RngState::new(seed, Stream::Init).rng();
    let mut u = FeedforwardNet::he_init(&config.value_arch(d, k), &mut rng)?;
    let mut v = FeedforwardNet::he_init(&config.gradient_arch(d, k), &mut rng)?;
    for block in u.param_blocks_mut().into_iter().chain(v.param_blocks_mut()) {
        let mut noise = vec![0.0; block.len()];
        fill_standard_normal(&mut rng, &mut noise);
        for (p, z) in block.iter_mut().zip(noise) {
            *p += check.jitter * z;
        }
    }
    let mut x0_rng = RngState::new(seed, Stream::Shuffle).rng();
    let mut w_rng = RngState::new(seed, Stream::W).rng();
    let batch = sample_step_batch(problem, grid, step, b_path, NextValue::Terminal, check.rows, &mut x0_rng, &mut w_rng)?;
    let (t, dt) = (grid.node(step), grid.step(step));

    let analytic: Vec<Vec<f64>> = {
        let (mut uu, mut vv) = (u.clone(), v.clone());
        let tape = Tape::new();
        let (loss, ut, vt) = step_objective(problem, &tape, &mut uu, &mut vv, &batch, t, dt)?;
        let grads = tape.gradient(loss)?;
        ut.params.iter().chain(&vt.params).map(|p| grads.wrt(p)).collect()
    };
    let names: Vec<String> = u
        .block_names()
        .into_iter()
        .map(|n| format!("U.{n}"))
        .chain(v.block_names().into_iter().map(|n| format!("V.{n}")))
        .collect();
    let n_u = u.param_blocks().len();
    let (ref_u, ref_v) = (ReferenceNet::new(&u), ReferenceNet::new(&v));
    let base = DriverExpansion::new(problem, &ref_u, &ref_v, &batch, t);

    let mut result = GradientCheck {
        checked: 0,
        below_floor: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    let mut pick_rng = RngState::new(seed, Stream::Shuffle).child(1).rng();
    for (bi, grad) in analytic.iter().enumerate() {
        let indices: Vec<usize> = match check.per_block {
            Some(m) if m < grad.len() => {
                // the largest half by magnitude, the rest uniformly at random
                let mut order: Vec<usize> = (0..grad.len()).collect();
                order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
                let mut chosen: Vec<usize> = order[..m / 2].to_vec();
                while chosen.len() < m {
                    let j = pick_rng.random_range(0..grad.len());
                    if !chosen.contains(&j) {
                        chosen.push(j);
                    }
                }
                chosen
            }
            _ => (0..grad.len()).collect(),
        };
        for j in indices {
            let a = grad[j];
            if a.abs() <= check.floor {
                result.below_floor += 1;
                continue;
            }
            let eval = |delta: f64| -> TwoFloat {
                let (mut uu, mut vv) = (ref_u.clone(), ref_v.clone());
                let target = if bi < n_u {
                    &mut uu.blocks[bi][j]
                } else {
                    &mut vv.blocks[bi - n_u][j]
                };
                *target += delta;
                reference_loss(problem, &uu, &vv, &batch, &base, dt)
            };
            let fd = ((eval(check.h) - eval(-check.h)) / (2.0 * check.h)).hi();
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            result.checked += 1;
            if rel > result.max_relative_error {
                result.max_relative_error = rel;
                result.worst = Some(WorstEntry {
                    block: names[bi].clone(),
                    index: j,
                    analytic: a,
                    finite_difference: fd,
                });
            }
        }
    }
    Ok(result)
}

