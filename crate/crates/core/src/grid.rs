//! Uniform one-dimensional grids and functions sampled on them.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Smallest admissible number of grid points.
pub const MIN_POINTS: usize = 16;

/// Uniform grid `lo = x_0 < x_1 < ... < x_{n-1} = hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return domain(format!("grid interval [{lo}, {hi}] is empty or not finite"));
        }
        if n < MIN_POINTS {
            return domain(format!("grid needs at least {MIN_POINTS} points, got {n}"));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `h`.
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Trapezoid quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }

    /// Default certification margin `max(4 sqrt(horizon), 10 h)`.
    pub fn boundary_margin(&self, horizon: f64) -> f64 {
        (4.0 * horizon.max(0.0).sqrt()).max(10.0 * self.spacing())
    }

    /// Indices of the points at distance at least `margin` from both ends.
    pub fn interior(&self, margin: f64) -> Range<usize> {
        let h = self.spacing();
        let k = ((margin / h) - 1e-9).ceil().max(0.0) as usize;
        if 2 * k >= self.n {
            return 0..0;
        }
        k..self.n - k
    }

    /// Cell containing `x` and the fractional position inside it.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let s = (x - self.lo) / self.spacing();
        let i = (s.floor() as usize).min(self.n - 2);
        Some((i, s - i as f64))
    }
}

/// Real values attached to the points of a [`Grid1D`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid1D,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!("grid has {} points but {} values were given", grid.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return domain(format!("non-finite value at grid index {i}"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.points().into_iter().map(f).collect())
    }

    pub fn constant(grid: Grid1D, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn from_parts_unchecked(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = self.values.iter().enumerate().map(|(i, &v)| f(self.grid.x(i), v)).collect();
        Self::new(self.grid, values)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self::from_parts_unchecked(self.grid, self.values.iter().map(|v| v + c).collect())
    }

    /// Gradient by centred differences, second-order one-sided at the ends.
    pub fn gradient(&self) -> Self {
        let n = self.len();
        let h = self.grid.spacing();
        let v = &self.values;
        let mut g = vec![0.0; n];
        for i in 1..n - 1 {
            g[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        }
        g[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        g[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
        Self::from_parts_unchecked(self.grid, g)
    }

    /// Centred second difference; the end values copy their neighbours.
    pub fn second_difference(&self) -> Vec<f64> {
        let n = self.len();
        let h2 = self.grid.spacing().powi(2);
        let v = &self.values;
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
        }
        d[0] = d[1];
        d[n - 1] = d[n - 2];
        d
    }

    /// Piecewise-linear interpolation; `None` outside the grid.
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        let (i, s) = self.grid.locate(x)?;
        Some(self.values[i] * (1.0 - s) + self.values[i + 1] * s)
    }

    pub fn mean_over(&self, range: Range<usize>) -> f64 {
        let len = range.len().max(1) as f64;
        self.values[range].iter().sum::<f64>() / len
    }

    /// Copy with the mean over `range` removed.
    pub fn centered(&self, range: Range<usize>) -> Self {
        let m = self.mean_over(range);
        self.shifted(-m)
    }

    /// Trapezoid integral of the values.
    pub fn integral(&self) -> f64 {
        self.grid.trapezoid_weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }
}

/// `log sum exp` of a slice, `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Sup norm of `a - b` over `range` after removing the mean difference.
pub fn sup_diff_mod_constant(a: &[f64], b: &[f64], range: Range<usize>) -> f64 {
    let len = range.len().max(1) as f64;
    let shift = range.clone().map(|i| a[i] - b[i]).sum::<f64>() / len;
    range.map(|i| (a[i] - b[i] - shift).abs()).fold(0.0, f64::max)
}
