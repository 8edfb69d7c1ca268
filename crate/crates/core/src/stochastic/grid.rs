use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A partition `0 = t_0 < t_1 < ... < t_N = T` of the time horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    steps: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// `n` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n == 0 {
            return Err(invalid("number of time steps must be at least 1"));
        }
        let mut nodes: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        nodes[n] = horizon;
        let steps = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(TimeGrid {
            nodes,
            steps,
            uniform: true,
        })
    }

    /// Arbitrary strictly increasing nodes starting at zero.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(invalid("a time grid needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(invalid(format!("first node must be 0, got {}", nodes[0])));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(invalid("grid nodes must be finite"));
        }
        if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "grid nodes must be strictly increasing (nodes {i} and {})",
                i + 1
            )));
        }
        let steps = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(TimeGrid {
            nodes,
            steps,
            uniform: false,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn step(&self, i: usize) -> f64 {
        self.steps[i]
    }

    /// Number of steps `N`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// `|π| = max_i Δt_i`.
    pub fn mesh(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }

    /// `|π| / min_i Δt_i`; exactly 1 for uniform grids.
    pub fn regularity(&self) -> f64 {
        if self.uniform {
            return 1.0;
        }
        let min = self.steps.iter().copied().fold(f64::INFINITY, f64::min);
        self.mesh() / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_step_unit_grid() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.mesh(), 0.25);
        assert_eq!(g.regularity(), 1.0);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn first_nodes_of_benchmark_grids() {
        assert_eq!(TimeGrid::uniform(1.0, 32).unwrap().node(1), 0.03125);
        assert_eq!(TimeGrid::uniform(1.0, 16).unwrap().node(1), 0.0625);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(TimeGrid::uniform(0.0, 4).is_err());
        assert!(TimeGrid::uniform(-1.0, 4).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn nonuniform_regularity() {
        let g = TimeGrid::from_nodes(vec![0.0, 0.1, 0.4, 1.0]).unwrap();
        assert!((g.mesh() - 0.6).abs() < 1e-15);
        assert!((g.regularity() - 6.0).abs() < 1e-12);
        assert!(!g.is_uniform());
    }

    #[test]
    fn steps_sum_to_horizon() {
        for &(t, n) in &[(1.0, 7usize), (0.3, 33), (2.7, 1000), (1.0, 64)] {
            let g = TimeGrid::uniform(t, n).unwrap();
            let sum: f64 = g.steps().iter().sum();
            assert!((sum - t).abs() <= 8.0 * f64::EPSILON * t, "{t} {n} {sum}");
            assert!(g.steps().iter().all(|&s| s > 0.0));
        }
    }
}
