use crate::error::{invalid, Error, Result};
use rand::Rng;

use crate::nn::{AdamState, FeedforwardNet, ForwardTrace, LrSchedule, Mode, Tape, Tensor, Var};
use crate::par::Execution;
use crate::problem::ProblemSpec;
use crate::stochastic::paths::increments_for_steps;
use crate::stochastic::{simulate_forward_steps, RngState, Stream, TimeGrid};

use super::loss::{predictor, step_loss};
use super::{StepNets, TrainConfig};

/// The solution estimate at `t_{i+1}` that feeds the predictor of step `i`.
#[derive(Clone, Copy)]
pub enum NextValue<'a> {
    /// `U_N = h`.
    Terminal,
    /// A frozen network `U_{i+1}`.
    Network(&'a FeedforwardNet),
}

impl NextValue<'_> {
    fn evaluate(&self, problem: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            NextValue::Terminal => Ok(problem.terminal_batch(x)),
            NextValue::Network(net) => net.predict(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEvent {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub rate: f64,
}

/// Receives the mean loss of every finished epoch.
pub trait TrainObserver: Sync {
    fn epoch(&self, event: &EpochEvent);
}

pub struct SilentObserver;

impl TrainObserver for SilentObserver {
    fn epoch(&self, _: &EpochEvent) {}
}

/// Seeds for step `step` of the solve identified by `run_seed`.
pub(crate) fn step_seeds(run_seed: u64, step: usize) -> (RngState, RngState, RngState) {
    let tag = step as u64;
    (
        RngState::new(run_seed, Stream::Init).child(tag),
        RngState::new(run_seed, Stream::W).child(tag),
        RngState::new(run_seed, Stream::Shuffle).child(tag),
    )
}

/// Trains `(U_i, V_i)` for step `step` with the fixed increment
/// `b_path[step]`. Every iteration draws fresh initial states and `W`
/// increments, simulates to `t_{step+1}`, and takes one Adam step on the
/// one-step residual loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    step: usize,
    b_path: &[f64],
    next: NextValue<'_>,
    config: &TrainConfig,
    run_seed: u64,
    warm: Option<&StepNets>,
    observer: &dyn TrainObserver,
) -> Result<StepNets> {
    config.validate()?;
    let (d, k, l) = (problem.d, problem.k, problem.l);
    if step >= grid.len() {
        return Err(invalid(format!("step {step} outside 0..{}", grid.len())));
    }
    if b_path.len() != grid.len() * l {
        return Err(invalid(format!(
            "B path has {} entries, expected {}",
            b_path.len(),
            grid.len() * l
        )));
    }
    if let NextValue::Network(net) = next {
        if net.mode() != Mode::Inference {
            return Err(invalid("the next-step network must be frozen"));
        }
    }
    let (init_seed, w_seed, x0_seed) = step_seeds(run_seed, step);
    let (mut u_net, mut v_net) = match warm {
        Some(prev) => {
            let (mut u, mut v) = (prev.u.clone(), prev.v.clone());
            u.unfreeze();
            v.unfreeze();
            (u, v)
        }
        None => {
            let mut rng = init_seed.rng();
            (
                FeedforwardNet::he_init(&config.value_arch(d, k), &mut rng)?,
                FeedforwardNet::he_init(&config.gradient_arch(d, k), &mut rng)?,
            )
        }
    };
    let lens: Vec<usize> = u_net
        .param_blocks()
        .iter()
        .chain(v_net.param_blocks().iter())
        .map(|b| b.len())
        .collect();
    let mut adam = AdamState::new(&lens);
    adam.eps = config.adam_eps;
    let mut schedule = LrSchedule::new(config.initial_rate, config.patience);
    schedule.min_delta = config.min_delta;

    let mut w_rng = w_seed.rng();
    let mut x0_rng = x0_seed.rng();
    let (t_i, dt) = (grid.node(step), grid.step(step));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for it in 0..config.iterations {
            let iteration = epoch * config.iterations + it;
            let batch = sample_step_batch(problem, grid, step, b_path, next, config.batch_size, &mut x0_rng, &mut w_rng)
                .map_err(|e| training_error(step, iteration, e))?;
            let tape = Tape::new();
            let (loss, u_trace, v_trace) = step_objective(problem, &tape, &mut u_net, &mut v_net, &batch, t_i, dt)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Training {
                    step,
                    iteration,
                    message: "loss is not finite".into(),
                });
            }
            let mut grads = tape.gradient(loss)?;
            let g: Vec<Vec<f64>> = u_trace
                .params
                .iter()
                .chain(&v_trace.params)
                .map(|p| grads.take(p))
                .collect();
            let mut blocks = u_net.param_blocks_mut();
            blocks.extend(v_net.param_blocks_mut());
            adam.step(&mut blocks, &g, schedule.rate())
                .map_err(|e| training_error(step, iteration, e))?;
            total += value;
        }
        let epoch_loss = total / config.iterations as f64;
        epoch_losses.push(epoch_loss);
        let rate_used = schedule.rate();
        schedule.update(epoch_loss);
        observer.epoch(&EpochEvent {
            step,
            epoch,
            loss: epoch_loss,
            rate: rate_used,
        });
    }
    if config.bn_calibration_batches > 0 {
        let mut batches = Vec::with_capacity(config.bn_calibration_batches);
        for _ in 0..config.bn_calibration_batches {
            batches.push(sample_step_batch(
                problem,
                grid,
                step,
                b_path,
                next,
                config.batch_size,
                &mut x0_rng,
                &mut w_rng,
            )?);
        }
        if config.batch_norm {
            let states: Vec<Vec<f64>> = batches.iter().map(|b| b.x.clone()).collect();
            u_net.calibrate_statistics(&states)?;
            v_net.calibrate_statistics(&states)?;
        }
        let shift = mean_residual(problem, &u_net, &v_net, &batches, t_i, dt)?;
        u_net.shift_output(&shift);
    }
    u_net.freeze();
    v_net.freeze();
    Ok(StepNets {
        u: u_net,
        v: v_net,
        final_loss: *epoch_losses.last().expect("at least one epoch"),
        epoch_losses,
    })
}

/// One mini-batch of step `i`: states `X_i: [B, d]`, increments
/// `ΔW_i: [B, d]` and predictor targets `Ψ_i: [B, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub rows: usize,
    pub x: Vec<f64>,
    pub dw: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Draws `rows` initial states, simulates them to `t_{step+1}` and applies
/// the predictor with the increment `b_path[step]`.
#[allow(clippy::too_many_arguments)]
pub fn sample_step_batch<R: Rng>(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    step: usize,
    b_path: &[f64],
    next: NextValue<'_>,
    rows: usize,
    x0_rng: &mut R,
    w_rng: &mut R,
) -> Result<StepBatch> {
    let (d, k, l) = (problem.d, problem.k, problem.l);
    if step >= grid.len() || b_path.len() != grid.len() * l {
        return Err(invalid("step or B path does not match the grid"));
    }
    let n_sim = step + 1;
    let mut x0 = vec![0.0; rows * d];
    for row in x0.chunks_exact_mut(d) {
        problem.sample_x0(&mut *x0_rng, row);
    }
    let w = increments_for_steps(&grid.steps()[..n_sim], d, rows, w_rng);
    let paths = simulate_forward_steps(problem, grid, &x0, &w, n_sim, Execution::Sequential)?;
    let width = (n_sim + 1) * d;
    let mut x = vec![0.0; rows * d];
    let mut x_next = vec![0.0; rows * d];
    let mut dw = vec![0.0; rows * d];
    for b in 0..rows {
        let path = &paths[b * width..(b + 1) * width];
        x[b * d..(b + 1) * d].copy_from_slice(&path[step * d..(step + 1) * d]);
        x_next[b * d..(b + 1) * d].copy_from_slice(&path[(step + 1) * d..]);
        dw[b * d..(b + 1) * d].copy_from_slice(&w[(b * n_sim + step) * d..(b * n_sim + step + 1) * d]);
    }
    let u_next = next.evaluate(problem, &x_next)?;
    let t_next = grid.node(step + 1);
    let mut g_val = vec![0.0; rows * k * l];
    for b in 0..rows {
        problem.noise(
            t_next,
            &x_next[b * d..(b + 1) * d],
            &u_next[b * k..(b + 1) * k],
            &mut g_val[b * k * l..(b + 1) * k * l],
        );
    }
    let psi = predictor(&u_next, &g_val, &b_path[step * l..(step + 1) * l], k)?;
    Ok(StepBatch { rows, x, dw, psi })
}

/// Records the step loss of `(u, v)` on `batch` in training mode. Returns
/// the loss and both parameter traces.
pub fn step_objective<'t>(
    problem: &ProblemSpec,
    tape: &'t Tape,
    u: &mut FeedforwardNet,
    v: &mut FeedforwardNet,
    batch: &StepBatch,
    t_i: f64,
    dt: f64,
) -> Result<(Var<'t>, ForwardTrace<'t>, ForwardTrace<'t>)> {
    let (d, k) = (problem.d, problem.k);
    let rows = batch.rows;
    let x = tape.constant(Tensor::from_parts(vec![rows, d], batch.x.clone()));
    let u_trace = u.forward(tape, x, Mode::Training)?;
    let v_trace = v.forward(tape, x, Mode::Training)?;
    let f_val = tape.rowwise(u_trace.output, v_trace.output, |b, y, z, out, jy, jz| {
        problem.driver_with_jacobian(t_i, &batch.x[b * d..(b + 1) * d], y, z, out, jy, jz)
    });
    let loss = step_loss(
        tape.constant(Tensor::from_parts(vec![rows, k], batch.psi.clone())),
        u_trace.output,
        v_trace.output,
        f_val,
        dt,
        tape.constant(Tensor::from_parts(vec![rows, d], batch.dw.clone())),
        k,
    );
    Ok((loss, u_trace, v_trace))
}

/// Mean of `Ψ − V ΔW + f Δt − U` over `batches` with both networks in
/// inference mode, per output component.
fn mean_residual(
    problem: &ProblemSpec,
    u_net: &FeedforwardNet,
    v_net: &FeedforwardNet,
    batches: &[StepBatch],
    t_i: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let (d, k) = (problem.d, problem.k);
    let mut sum = vec![0.0; k];
    let mut rows = 0;
    let mut f = vec![0.0; k];
    for batch in batches {
        let u = u_net.predict(&batch.x)?;
        let v = v_net.predict(&batch.x)?;
        for b in 0..batch.rows {
            let (x, ub, vb) = (&batch.x[b * d..(b + 1) * d], &u[b * k..(b + 1) * k], &v[b * k * d..(b + 1) * k * d]);
            problem.driver(t_i, x, ub, vb, &mut f);
            for c in 0..k {
                let vdw: f64 = vb[c * d..(c + 1) * d].iter().zip(&batch.dw[b * d..(b + 1) * d]).map(|(a, w)| a * w).sum();
                sum[c] += batch.psi[b * k + c] - vdw + f[c] * dt - ub[c];
            }
        }
        rows += batch.rows;
    }
    Ok(sum.into_iter().map(|s| s / rows as f64).collect())
}

fn training_error(step: usize, iteration: usize, e: Error) -> Error {
    Error::Training {
        step,
        iteration,
        message: e.to_string(),
    }
}
