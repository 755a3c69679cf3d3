//! Uniform 1D grids and densities sampled on them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quadrature::trapezoid;

/// Uniform node set `x0 + i * dx`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(x0: f64, dx: f64, n: usize) -> Result<Self> {
        if !(dx > 0.0) || !x0.is_finite() {
            return Err(invalid(format!("grid needs finite x0 and dx > 0 (x0 = {x0}, dx = {dx})")));
        }
        if n < 3 {
            return Err(invalid(format!("grid needs at least 3 nodes, got {n}")));
        }
        Ok(Self { x0, dx, n })
    }

    /// Grid covering `[x_min, x_max]` with nodes spaced at most `dx`.
    pub fn covering(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !(x_max > x_min) {
            return Err(invalid(format!("empty interval [{x_min}, {x_max}]")));
        }
        let cells = ((x_max - x_min) / dx - 1e-9).ceil().max(2.0) as usize;
        Self::new(x_min, dx, cells + 1)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Linear interpolation of node values at `x`; `None` outside the grid.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Option<f64> {
        let s = (x - self.x0) / self.dx;
        if !(s >= 0.0) || s > (self.n - 1) as f64 {
            return None;
        }
        let i = (s.floor() as usize).min(self.n - 2);
        let w = s - i as f64;
        Some(values[i] * (1.0 - w) + values[i + 1] * w)
    }
}

/// A density on a grid that may be attached to a moving frame.
///
/// Node `i` sits at lab-frame position `x0 + i * dx + frame_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub time: f64,
    pub frame_offset: f64,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.n, values.len());
        Self { x0: grid.x0, dx: grid.dx, values, time: 0.0, frame_offset: 0.0 }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn grid(&self) -> Grid {
        Grid { x0: self.x0, dx: self.dx, n: self.values.len() }
    }

    /// Lab-frame position of node `i`.
    pub fn lab_x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx + self.frame_offset
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.dx)
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        trapezoid(&sq, self.dx).sqrt()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rescales to unit trapezoid mass.
    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0) || !m.is_finite() {
            return Err(invalid(format!("cannot normalize density with mass {m}")));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Lab-frame value at `x` by linear interpolation (zero outside the grid).
    pub fn value_at(&self, x: f64) -> f64 {
        self.grid().interpolate(&self.values, x - self.frame_offset).unwrap_or(0.0)
    }

    /// Grid L2 distance to another density on the same grid and frame.
    pub fn l2_distance(&self, other: &GridDensity) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let sq: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).collect();
        trapezoid(&sq, self.dx).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(s: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn gaussian_l2_norm_matches_closed_form() {
        for s in [0.2, 0.5, 1.0] {
            let grid = Grid::covering(-12.0 * s, 12.0 * s, s / 200.0).unwrap();
            let rho = GridDensity::from_fn(grid, gaussian(s));
            let exact = (1.0 / (2.0 * s * std::f64::consts::PI.sqrt())).sqrt();
            assert!((rho.l2_norm().powi(2) - exact * exact).abs() < 1e-4, "s = {s}");
            assert!((rho.mass() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mass_is_linear() {
        let grid = Grid::covering(-5.0, 5.0, 0.01).unwrap();
        let mut rho = GridDensity::from_fn(grid, gaussian(0.7));
        rho.normalize().unwrap();
        assert!((rho.scaled(2.0).mass() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_is_exact_for_linear_data_and_none_outside() {
        let grid = Grid::new(-1.0, 0.5, 5).unwrap();
        let v: Vec<f64> = grid.nodes().map(|x| 3.0 * x - 1.0).collect();
        assert!((grid.interpolate(&v, 0.3).unwrap() - (-0.1)).abs() < 1e-14);
        assert!((grid.interpolate(&v, 1.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(grid.interpolate(&v, 1.0001).is_none());
        assert!(grid.interpolate(&v, -1.0001).is_none());
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(0.0, 0.0, 10).is_err());
        assert!(Grid::new(0.0, 0.1, 2).is_err());
        assert!(Grid::covering(1.0, 1.0, 0.1).is_err());
    }
}
