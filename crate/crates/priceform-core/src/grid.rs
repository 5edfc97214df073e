//! Uniform time-space lattice and potential fields with forward differences.

use alloc::vec;
use alloc::vec::Vec;

/// Uniform grid on `[0, T] x [-R, R]` with `n_t` time intervals and `n_x`
/// space intervals. Nodes are `t_i = i h_t`, `x_j = -R + j h_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub horizon: f64,
    pub radius: f64,
    pub n_t: usize,
    pub n_x: usize,
}

impl Grid {
    pub fn new(horizon: f64, radius: f64, n_t: usize, n_x: usize) -> Self {
        assert!(horizon > 0.0 && radius > 0.0, "grid extents must be positive");
        assert!(n_t >= 1 && n_x >= 2, "grid must have at least 1x2 cells");
        Self {
            horizon,
            radius,
            n_t,
            n_x,
        }
    }

    #[inline]
    pub fn h_t(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    #[inline]
    pub fn h_x(&self) -> f64 {
        2.0 * self.radius / self.n_x as f64
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.h_t()
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        -self.radius + j as f64 * self.h_x()
    }

    /// Number of nodes per time level.
    #[inline]
    pub fn nodes_x(&self) -> usize {
        self.n_x + 1
    }

    /// Number of time levels.
    #[inline]
    pub fn nodes_t(&self) -> usize {
        self.n_t + 1
    }

    /// Grid refined by an integer factor in both directions.
    pub fn refined(&self, factor: usize) -> Grid {
        Grid::new(self.horizon, self.radius, self.n_t * factor, self.n_x * factor)
    }
}

/// Grid values of the potential, row-major with time as the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub grid: Grid,
    values: Vec<f64>,
}

impl PotentialField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.nodes_t() * grid.nodes_x();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.nodes_t() * grid.nodes_x());
        Self { grid, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nodes_x() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.grid.nodes_x() + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Forward time difference `(phi(i+1,j) - phi(i,j)) / h_t` on cells
    /// `i = 0..n_t-1`.
    #[inline]
    pub fn forward_dt(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.grid.n_t);
        (self.get(i + 1, j) - self.get(i, j)) / self.grid.h_t()
    }

    /// Forward space difference `(phi(i,j+1) - phi(i,j)) / h_x` on cells
    /// `j = 0..n_x-1`.
    #[inline]
    pub fn forward_dx(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j < self.grid.n_x);
        (self.get(i, j + 1) - self.get(i, j)) / self.grid.h_x()
    }

    /// Cell density `m(i, j) = forward_dx(i, j)` for `j = 0..n_x-1`.
    pub fn density_level(&self, i: usize) -> Vec<f64> {
        (0..self.grid.n_x).map(|j| self.forward_dx(i, j)).collect()
    }

    pub fn sup_distance(&self, other: &PotentialField) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
