//! Measurement geometry and discretization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Imaging system: a square domain of interest centred on the origin, ringed
/// by transmitters and receivers on a common circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub doi_side_m: f64,
    pub antenna_radius_m: f64,
    pub freq_hz: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub forward_grid: usize,
    pub inversion_grid: usize,
    pub lossy: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            doi_side_m: 0.2,
            antenna_radius_m: 1.67,
            freq_hz: 3.0e9,
            n_tx: 16,
            n_rx: 32,
            forward_grid: 100,
            inversion_grid: 64,
            lossy: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.doi_side_m > 0.0) {
            return Err(Error::Config(format!("doi_side_m must be > 0, got {}", self.doi_side_m)));
        }
        let half_diag = self.doi_side_m * std::f64::consts::SQRT_2 / 2.0;
        if !(self.antenna_radius_m > half_diag) {
            return Err(Error::Config(format!(
                "antenna radius {} m does not clear the DOI (needs > {half_diag:.4} m)",
                self.antenna_radius_m
            )));
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return Err(Error::Config(format!("frequency must be positive, got {}", self.freq_hz)));
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::Config("n_tx and n_rx must both be >= 1".into()));
        }
        if self.forward_grid < 2 || self.inversion_grid < 2 {
            return Err(Error::Config("grids need at least 2 cells per side".into()));
        }
        Ok(())
    }

    /// Simulating and inverting on the same grid commits the inverse crime.
    pub fn commits_inverse_crime(&self) -> bool {
        self.forward_grid == self.inversion_grid
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.freq_hz / SPEED_OF_LIGHT
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.freq_hz
    }

    pub fn transmitter_positions(&self) -> Vec<[f64; 2]> {
        ring(self.n_tx, self.antenna_radius_m)
    }

    pub fn receiver_positions(&self) -> Vec<[f64; 2]> {
        ring(self.n_rx, self.antenna_radius_m)
    }

    pub fn grid(&self, cells: usize) -> Grid {
        Grid::new(self.doi_side_m, cells)
    }
}

/// `count` points equally spaced on a circle, the first at angle 0.
pub fn ring(count: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..count)
        .map(|q| {
            let theta = 2.0 * PI * q as f64 / count as f64;
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect()
}

/// Uniform `cells x cells` discretization of the DOI.
///
/// Cells are stored row-major in image order: row 0 is the top edge
/// (largest y), column 0 the left edge (smallest x). Cell `n = row * cells + col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub side_m: f64,
    pub cells: usize,
}

impl Grid {
    pub fn new(side_m: f64, cells: usize) -> Self {
        Grid { side_m, cells }
    }

    pub fn len(&self) -> usize {
        self.cells * self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    pub fn step(&self) -> f64 {
        self.side_m / self.cells as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.step() * self.step()
    }

    /// Radius of the disk with the same area as one cell.
    pub fn equivalent_radius(&self) -> f64 {
        (self.cell_area() / PI).sqrt()
    }

    pub fn x(&self, col: usize) -> f64 {
        -0.5 * self.side_m + (col as f64 + 0.5) * self.step()
    }

    pub fn y(&self, row: usize) -> f64 {
        0.5 * self.side_m - (row as f64 + 0.5) * self.step()
    }

    pub fn center(&self, n: usize) -> [f64; 2] {
        [self.x(n % self.cells), self.y(n / self.cells)]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|n| self.center(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_wavenumber() {
        let k0 = SceneConfig::default().wavenumber();
        assert!((k0 - 62.875_350_658_550_45).abs() < 1e-12, "{k0}");
    }

    #[test]
    fn validation() {
        assert!(SceneConfig::default().validate().is_ok());
        let mut c = SceneConfig::default();
        c.antenna_radius_m = 0.14;
        assert!(c.validate().is_err());
        c = SceneConfig::default();
        c.n_rx = 0;
        assert!(c.validate().is_err());
        c = SceneConfig::default();
        c.doi_side_m = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn inverse_crime_flag() {
        let mut c = SceneConfig::default();
        assert!(!c.commits_inverse_crime());
        c.inversion_grid = 100;
        assert!(c.commits_inverse_crime());
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::new(0.2, 4);
        let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15;
        assert!(close(g.center(0), [-0.075, 0.075]));
        assert!(close(g.center(15), [0.075, -0.075]));
        assert!((g.cell_area() - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn ring_starts_at_angle_zero() {
        let r = ring(4, 2.0);
        assert_eq!(r[0], [2.0, 0.0]);
        assert!((r[1][0]).abs() < 1e-15 && (r[1][1] - 2.0).abs() < 1e-15);
    }
}
