//! Uniform horizon grids and vector-valued samples on them.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// `n` equidistant nodes `τ_i = i·T/(n−1)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(SolverError::InvalidInput(format!("grid needs at least 2 points, got {n}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SolverError::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Grid { n, horizon })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.n - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.time(i)).collect()
    }

    /// Same node count over a different horizon length.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Grid::new(self.n, horizon)
    }

    /// Interval index and fractional position of `tau`, clamped to the grid.
    pub(crate) fn locate(&self, tau: f64) -> (usize, f64) {
        let s = (tau / self.dt()).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }

    /// Trapezoid weights; `Σ w_i v_i` integrates samples `v_i`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.n)
            .map(|i| if i == 0 || i + 1 == self.n { 0.5 * dt } else { dt })
            .collect()
    }
}

/// Vector samples of dimension `dim` at every node of a grid, stored node-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    dim: usize,
    n: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Trajectory {
            dim,
            n,
            data: vec![0.0; dim * n],
        }
    }

    pub fn constant(n: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(value.len() * n);
        for _ in 0..n {
            data.extend_from_slice(value);
        }
        Trajectory {
            dim: value.len(),
            n,
            data,
        }
    }

    /// Samples of a function of the node time.
    pub fn from_fn(grid: &Grid, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut traj = Trajectory::zeros(dim, grid.len());
        for i in 0..grid.len() {
            f(grid.time(i), traj.row_mut(i));
        }
        traj
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        let n = if dim == 0 { 0 } else { data.len() / dim };
        assert_eq!(n * dim, data.len(), "flat trajectory length is not a multiple of dim");
        Trajectory { dim, n, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.n - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks(self.dim.max(1)).take(if self.dim == 0 { 0 } else { self.n })
    }

    /// Component `k` at every node.
    pub fn component(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.dim + k]).collect()
    }

    /// Linear interpolation at `tau`, holding the end values outside `[0, T]`.
    pub fn interpolate(&self, grid: &Grid, tau: f64, out: &mut [f64]) {
        if self.dim == 0 {
            return;
        }
        let (i, w) = grid.locate(tau);
        let a = self.row(i);
        let b = self.row(i + 1);
        for k in 0..self.dim {
            out[k] = a[k] + w * (b[k] - a[k]);
        }
    }

    /// Cubic Hermite interpolation through the nodes with slopes `rate`.
    pub fn interpolate_hermite(&self, rate: &Trajectory, grid: &Grid, tau: f64, out: &mut [f64]) {
        let (i, w) = grid.locate(tau);
        let h = grid.dt();
        let (a, b) = (self.row(i), self.row(i + 1));
        let (da, db) = (rate.row(i), rate.row(i + 1));
        let w2 = w * w;
        let w3 = w2 * w;
        let (h00, h10, h01, h11) = (2.0 * w3 - 3.0 * w2 + 1.0, w3 - 2.0 * w2 + w, 3.0 * w2 - 2.0 * w3, w3 - w2);
        for k in 0..self.dim {
            out[k] = h00 * a[k] + h10 * h * da[k] + h01 * b[k] + h11 * h * db[k];
        }
    }

    /// Resamples onto `to` as a function of `τ + shift` on `from`, holding end values.
    pub fn resample(&self, from: &Grid, to: &Grid, shift: f64) -> Trajectory {
        let mut out = Trajectory::zeros(self.dim, to.len());
        for j in 0..to.len() {
            let tau = to.time(j) + shift;
            let (row, dim) = (out.row_mut(j), self.dim);
            if dim > 0 {
                self.interpolate(from, tau, row);
            }
        }
        out
    }

    /// `Σ_i ‖a_i − b_i‖²` over nodes.
    pub fn dist_sq(&self, other: &Trajectory) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Trapezoid approximation of `∫ ⟨a(t), b(t)⟩ dt`.
    pub fn inner(&self, other: &Trajectory, grid: &Grid) -> f64 {
        let w = grid.trapezoid_weights();
        (0..self.n)
            .map(|i| w[i] * self.row(i).iter().zip(other.row(i)).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = Grid::new(5, 2.0).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(Grid::new(1, 1.0).is_err());
        assert!(Grid::new(3, 0.0).is_err());
    }

    #[test]
    fn interpolation_is_linear_and_held() {
        let g = Grid::new(3, 2.0).unwrap();
        let tr = Trajectory::from_fn(&g, 1, |t, out| out[0] = t * t);
        let mut v = [0.0];
        tr.interpolate(&g, 0.5, &mut v);
        assert_eq!(v[0], 0.5);
        tr.interpolate(&g, 1.5, &mut v);
        assert_eq!(v[0], 2.5);
        tr.interpolate(&g, 5.0, &mut v);
        assert_eq!(v[0], 4.0);
        tr.interpolate(&g, -1.0, &mut v);
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn shift_holds_tail() {
        let g = Grid::new(5, 1.0).unwrap();
        let tr = Trajectory::from_fn(&g, 1, |t, out| out[0] = t);
        let shifted = tr.resample(&g, &g, 0.25);
        assert_eq!(shifted.component(0), vec![0.25, 0.5, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn regrid_to_shorter_horizon() {
        let g = Grid::new(3, 2.0).unwrap();
        let tr = Trajectory::from_fn(&g, 1, |t, out| out[0] = 3.0 * t);
        let g2 = g.with_horizon(1.0).unwrap();
        assert_eq!(tr.resample(&g, &g2, 0.0).component(0), vec![0.0, 1.5, 3.0]);
    }

    #[test]
    fn trapezoid_inner_product() {
        let g = Grid::new(11, 1.0).unwrap();
        let a = Trajectory::from_fn(&g, 1, |t, out| out[0] = t);
        let one = Trajectory::constant(11, &[1.0]);
        assert!((a.inner(&one, &g) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hermite_is_exact_on_cubics() {
        let g = Grid::new(4, 1.5).unwrap();
        let x = Trajectory::from_fn(&g, 1, |t, out| out[0] = t * t * t - 2.0 * t);
        let dx = Trajectory::from_fn(&g, 1, |t, out| out[0] = 3.0 * t * t - 2.0);
        let mut out = [0.0];
        for tau in [0.0, 0.2, 0.77, 1.1, 1.5] {
            x.interpolate_hermite(&dx, &g, tau, &mut out);
            assert!((out[0] - (tau * tau * tau - 2.0 * tau)).abs() < 1e-13, "τ={tau}: {}", out[0]);
        }
    }
}
