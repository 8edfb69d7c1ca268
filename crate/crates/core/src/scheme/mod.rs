//! Backward predictor-corrector induction.
//!
//! Starting from the terminal rule `U_N = h`, each step `i = N-1, …, 0`
//! predicts `Ψ_i = U_{i+1}(X_{i+1}) + g(t_{i+1}, X_{i+1}, U_{i+1}) ΔB_i` with
//! the fixed `B` increment and then trains a pair of networks `(U_i, V_i)`
//! on the mean squared one-step residual
//! `Ψ_i - V_i ΔW_i + f(t_i, X_i, U_i, V_i) Δt_i - U_i`.

mod config;
mod gradcheck;
mod loss;
mod solution;
mod train;

pub use config::TrainConfig;
pub use gradcheck::{check_step_gradients, GradientCheck, GradientCheckConfig, WorstEntry};
pub use loss::{predictor, step_loss, step_loss_value};
pub use solution::{solve, solve_with, SchemeSolution, StepNets, SOLUTION_FORMAT};
pub use train::{
    sample_step_batch, step_objective, train_step, EpochEvent, NextValue, SilentObserver, StepBatch, TrainObserver,
};
