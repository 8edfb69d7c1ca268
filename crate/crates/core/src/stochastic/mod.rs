//! Time grids, seeded Gaussian increments for the two independent Brownian
//! motions, and Euler–Maruyama simulation of the forward diffusion.

mod grid;
pub(crate) mod paths;
mod rng;

pub use grid::TimeGrid;
pub use paths::{sample_increments, simulate_forward, simulate_forward_steps, PathBundle};
pub use rng::{fill_standard_normal, mix_seed, RngState, Stream};
