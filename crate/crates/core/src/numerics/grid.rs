use super::matrix::Matrix;
use crate::{Error, Result};

/// Uniform time grid on `[0, t1]` with `steps` intervals.
///
/// Node `k` sits at `k * dt`. Every solver, sampler and quadrature in the
/// crate shares one grid so that gridded functions line up node for node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t1: f64, steps: usize) -> Result<Self> {
        if !(t1.is_finite() && t1 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be finite and positive, got {t1}"
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 steps, got {steps}"
            )));
        }
        Ok(Self { t1, steps })
    }

    #[inline]
    pub fn t0(&self) -> f64 {
        0.0
    }

    #[inline]
    pub fn t1(&self) -> f64 {
        self.t1
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    #[inline]
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t1 / self.steps as f64
    }

    #[inline]
    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.dt()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= 0.0 && t <= self.t1
    }

    /// Surrounding node pair and interpolation weight for time `t`.
    fn locate(&self, t: f64) -> (usize, usize, f64) {
        let dt = self.dt();
        let pos = (t / dt).clamp(0.0, self.steps as f64);
        let k0 = (pos.floor() as usize).min(self.steps - 1);
        let w = pos - k0 as f64;
        (k0, k0 + 1, w)
    }
}

/// Linear interpolation of a matrix-valued grid function.
pub fn interp_matrix(grid: &TimeGrid, values: &[Matrix], t: f64) -> Matrix {
    debug_assert_eq!(values.len(), grid.nodes());
    let (k0, k1, w) = grid.locate(t);
    if w == 0.0 {
        return values[k0].clone();
    }
    values[k0].scale(1.0 - w).add(&values[k1].scale(w))
}

/// Linear interpolation of a vector-valued grid function.
pub fn interp_vector(grid: &TimeGrid, values: &[Vec<f64>], t: f64) -> Vec<f64> {
    debug_assert_eq!(values.len(), grid.nodes());
    let (k0, k1, w) = grid.locate(t);
    if w == 0.0 {
        return values[k0].clone();
    }
    values[k0]
        .iter()
        .zip(&values[k1])
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect()
}

/// Trapezoidal quadrature of node samples over the grid.
pub fn trapezoid(grid: &TimeGrid, samples: &[f64]) -> f64 {
    debug_assert_eq!(samples.len(), grid.nodes());
    let dt = grid.dt();
    let mut acc = 0.5 * (samples[0] + samples[samples.len() - 1]);
    for v in &samples[1..samples.len() - 1] {
        acc += v;
    }
    acc * dt
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_invariants() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        let g = TimeGrid::new(12.0, 2400).unwrap();
        assert_eq!(g.dt(), 0.005);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(2400), 12.0);
        assert_eq!(g.nodes(), 2401);
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let vals = vec![vec![0.0], vec![1.0], vec![4.0]];
        assert_eq!(interp_vector(&g, &vals, 0.25)[0], 0.5);
        assert_eq!(interp_vector(&g, &vals, 0.5)[0], 1.0);
        assert!((interp_vector(&g, &vals, 0.75)[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        let samples: Vec<f64> = (0..5).map(|k| 3.0 * g.time(k)).collect();
        assert!((trapezoid(&g, &samples) - 6.0).abs() < 1e-14);
    }
}
