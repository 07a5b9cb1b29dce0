//! Tensor-product grids on the unit hypercube and fields sampled on them.

use crate::error::{Error, Result};

/// Uniform tensor grid on `[0, 1]^d` including the boundary nodes.
///
/// Node `k` along axis `i` sits at `k * h_i` with `h_i = 1 / (n_i - 1)`.
/// Linear indices are row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(n: &[usize]) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::Parameter("grid needs at least one axis".into()));
        }
        if let Some(&bad) = n.iter().find(|&&k| k < 5) {
            return Err(Error::Parameter(format!(
                "grid needs at least 5 nodes per axis, got {bad}"
            )));
        }
        let mut strides = vec![1; n.len()];
        for i in (0..n.len() - 1).rev() {
            strides[i] = strides[i + 1] * n[i + 1];
        }
        let len = n.iter().product();
        let h = n.iter().map(|&k| 1.0 / (k - 1) as f64).collect();
        Ok(Self { n: n.to_vec(), h, strides, len })
    }

    /// `n` nodes along each of `dim` axes.
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::new(&vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        self.strides
            .iter()
            .map(|&s| {
                let k = rem / s;
                rem %= s;
                k
            })
            .collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    /// Index component of node `idx` along `axis`.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.n[axis]
    }

    pub fn coord(&self, idx: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.axis_index(idx, a) as f64 * self.h[a])
            .collect()
    }

    pub fn coords(&self) -> Vec<Vec<f64>> {
        (0..self.len).map(|i| self.coord(i)).collect()
    }

    /// Neighbor one step up (`forward = true`) or down along `axis`.
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let k = self.axis_index(idx, axis);
        if forward {
            (k + 1 < self.n[axis]).then(|| idx + self.strides[axis])
        } else {
            (k > 0).then(|| idx - self.strides[axis])
        }
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|a| {
            let k = self.axis_index(idx, a);
            k == 0 || k + 1 == self.n[a]
        })
    }

    /// Trapezoid weight of node index `k` along `axis`.
    pub fn axis_weight(&self, axis: usize, k: usize) -> f64 {
        if k == 0 || k + 1 == self.n[axis] {
            0.5 * self.h[axis]
        } else {
            self.h[axis]
        }
    }

    /// Dual-cell volume of a node (tensor trapezoid rule); sums to 1 over the grid.
    pub fn node_volume(&self, idx: usize) -> f64 {
        (0..self.dim())
            .map(|a| self.axis_weight(a, self.axis_index(idx, a)))
            .product()
    }

    pub fn node_volumes(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.node_volume(i)).collect()
    }

    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> GridFunction {
        (0..self.len).map(|i| f(&self.coord(i))).collect()
    }
}

/// One real value per grid node.
pub type GridFunction = Vec<f64>;

/// A grid function at each node of a uniform time grid `t_k = k * dt`, `k = 0..=N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub dt: f64,
    pub snapshots: Vec<GridFunction>,
}

impl SpaceTimeField {
    pub fn zeros(nodes: usize, steps: usize, horizon: f64) -> Self {
        Self {
            dt: horizon / steps as f64,
            snapshots: vec![vec![0.0; nodes]; steps + 1],
        }
    }

    /// Samples `f(x, t)` at every space-time node.
    pub fn from_fn<F: Fn(&[f64], f64) -> f64>(grid: &Grid, steps: usize, horizon: f64, f: F) -> Self {
        let dt = horizon / steps as f64;
        let coords = grid.coords();
        let snapshots = (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                coords.iter().map(|x| f(x, t)).collect()
            })
            .collect();
        Self { dt, snapshots }
    }

    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn initial(&self) -> &GridFunction {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &GridFunction {
        self.snapshots.last().expect("at least one snapshot")
    }

    pub fn is_finite(&self) -> bool {
        self.snapshots.iter().flatten().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.snapshots.len() == other.snapshots.len()
            && (self.dt - other.dt).abs() <= 1e-14 * self.dt.abs().max(1.0)
            && self
                .snapshots
                .first()
                .zip(other.snapshots.first())
                .is_some_and(|(a, b)| a.len() == b.len())
    }
}
