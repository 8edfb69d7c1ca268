//! Predictor-corrector deep learning solver for backward stochastic PDEs
//! driven by an independent Brownian motion `B`.
//!
//! Each backward time step predicts with an Euler step in `B` and corrects
//! by training a pair of networks on the one-step BSDE residual of the
//! deterministic part. See [`scheme::solve`] for the backward loop and
//! [`analysis`] for the experiment harness.

pub mod analysis;
pub mod error;
pub mod nn;
pub mod par;
pub mod problem;
pub mod scheme;
pub mod stochastic;

pub use error::{Error, Result};
pub use par::Execution;
pub use problem::{benchmark_problem, ProblemSpec};
pub use stochastic::{RngState, Stream, TimeGrid};
