//! Uniform grids and composite Simpson weights.

use crate::error::{Error, Result};

/// `points` equispaced nodes covering `[start, end]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, points: usize) -> Result<Self> {
        if !(start < end) || points < 3 {
            return Err(Error::invalid(format!(
                "grid needs start < end and at least 3 points, got [{start}, {end}] with {points}"
            )));
        }
        Ok(Self { start, end, points })
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / (self.points - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.end
        } else {
            self.start + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.node(k)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        simpson_weights(self.points, self.step())
    }

    /// Recovers the grid from sample abscissae, checking that they are
    /// increasing and equispaced.
    pub fn from_abscissae(xs: &[f64]) -> Result<Self> {
        if xs.len() < 3 {
            return Err(Error::invalid("need at least 3 samples"));
        }
        let grid = Self::new(xs[0], xs[xs.len() - 1], xs.len())?;
        let h = grid.step();
        for (k, &x) in xs.iter().enumerate() {
            if (x - grid.node(k)).abs() > 1e-9 * h.max(1e-300) + 1e-12 * x.abs() {
                return Err(Error::invalid(format!(
                    "samples are not on a uniform grid (node {k}: {x} vs {})",
                    grid.node(k)
                )));
            }
        }
        Ok(grid)
    }
}

/// Composite Simpson weights for `n` equispaced nodes with spacing `h`.
/// An odd number of intervals closes with a Simpson 3/8 panel; two nodes
/// fall back to the trapezoid.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    if n == 2 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let intervals = n - 1;
    let simpson_intervals = if intervals % 2 == 0 {
        intervals
    } else {
        intervals - 3
    };
    for k in (0..simpson_intervals).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if simpson_intervals < intervals {
        let k = simpson_intervals;
        w[k] += 3.0 * h / 8.0;
        w[k + 1] += 9.0 * h / 8.0;
        w[k + 2] += 9.0 * h / 8.0;
        w[k + 3] += 3.0 * h / 8.0;
    }
    w
}
