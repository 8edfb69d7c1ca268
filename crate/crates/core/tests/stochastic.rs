use spde_core::stochastic::{sample_increments, simulate_forward};
use spde_core::{benchmark_problem, RngState, Stream, TimeGrid};

fn terminal_moments(n: usize, m: usize, seed: u64) -> (f64, f64) {
    let p = benchmark_problem(1);
    let grid = TimeGrid::uniform(1.0, n).unwrap();
    let mut rng = RngState::new(seed, Stream::Shuffle).rng();
    let mut x0 = vec![0.0; m];
    for v in x0.iter_mut() {
        p.sample_x0(&mut rng, std::slice::from_mut(v));
    }
    let w = sample_increments(&grid, 1, m, &mut RngState::new(seed, Stream::W).rng()).unwrap();
    let paths = simulate_forward(&p, &grid, &x0, &w).unwrap();
    let xt: Vec<f64> = paths.chunks_exact(n + 1).map(|q| q[n]).collect();
    let mean = xt.iter().sum::<f64>() / m as f64;
    let var = xt.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

#[test]
fn euler_terminal_mean_matches_a_finer_grid() {
    let (coarse, se_c) = terminal_moments(32, 100_000, 1);
    let (fine, se_f) = terminal_moments(320, 100_000, 2);
    let combined = (se_c * se_c + se_f * se_f).sqrt();
    assert!((coarse - fine).abs() < 3.0 * combined, "{coarse} vs {fine}, se {combined}");
}

#[test]
fn increments_are_reproducible_from_their_seed() {
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let a = sample_increments(&grid, 3, 10, &mut RngState::new(5, Stream::W).rng()).unwrap();
    let b = sample_increments(&grid, 3, 10, &mut RngState::new(5, Stream::W).rng()).unwrap();
    let c = sample_increments(&grid, 3, 10, &mut RngState::new(5, Stream::B).rng()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
