//! Discrete Green's operators of the 2-D TM problem.
//!
//! With square cells replaced by disks of equal area (radius `a`), the
//! volume operator `G_D` (DOI to DOI) and the surface operator `G_S` (DOI to
//! receivers) are
//!
//! ```text
//! G_D[n, n'] = (i k0 pi a / 2) J1(k0 a) H0(k0 |r_n - r_n'|)    n != n'
//! G_D[n, n]  = (i k0 pi a / 2) H1(k0 a) - 1
//! G_S[q, n]  = (i k0 pi a / 2) J1(k0 a) H0(k0 |r_q - r_n|)
//! ```
//!
//! `G_D` depends only on the cell offset, so it is two-level Toeplitz and is
//! applied by embedding its stencil in a `2M x 2M` circulant and using FFTs.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::config::{Grid, SceneConfig};
use crate::error::{Error, Result};
use crate::field::CMatrix;
use crate::special::{bessel_j, hankel1_both, Order};

/// Largest grid for which a dense `G_D` may be materialized (4096^2 entries).
pub const DENSE_MAX_GRID: usize = 64;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyPath {
    Dense,
    Fft,
}

/// Prefactor `(i k0 pi a / 2) J1(k0 a)` shared by all off-diagonal entries.
fn coupling(k0: f64, a: f64) -> Result<Complex64> {
    Ok(I * (k0 * std::f64::consts::PI * a / 2.0) * bessel_j(Order::One, k0 * a)?)
}

/// Self term `(i k0 pi a / 2) H1(k0 a) - 1`.
fn self_term(k0: f64, a: f64) -> Result<Complex64> {
    let (_, h1) = hankel1_both(k0 * a)?;
    Ok(I * (k0 * std::f64::consts::PI * a / 2.0) * h1 - 1.0)
}

pub struct GreensVolume {
    grid: Grid,
    k0: f64,
    diagonal: Complex64,
    /// `stencil[dy * M + dx]` = off-diagonal entry for row/column offsets
    /// `(dy, dx)`; the zero offset holds 0 (the self term is `diagonal`).
    stencil: Vec<Complex64>,
    /// Spectrum of the stencil embedded in a `2M x 2M` circulant.
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    dense: OnceLock<Vec<Complex64>>,
}

impl std::fmt::Debug for GreensVolume {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreensVolume")
            .field("grid", &self.grid)
            .field("k0", &self.k0)
            .field("diagonal", &self.diagonal)
            .field("dense_materialized", &self.dense.get().is_some())
            .finish()
    }
}

impl GreensVolume {
    pub fn assemble(config: &SceneConfig, cells: usize) -> Result<Self> {
        config.validate()?;
        if cells < 2 {
            return Err(Error::Config(format!("G_D needs at least 2 cells per side, got {cells}")));
        }
        let grid = config.grid(cells);
        let k0 = config.wavenumber();
        let a = grid.equivalent_radius();
        let h = grid.step();
        let coeff = coupling(k0, a)?;
        let diagonal = self_term(k0, a)?;

        let m = cells;
        let mut stencil = vec![Complex64::new(0.0, 0.0); m * m];
        stencil
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(idx, slot)| -> Result<()> {
                let (dy, dx) = (idx / m, idx % m);
                if idx != 0 {
                    let r = h * ((dx * dx + dy * dy) as f64).sqrt();
                    let (h0, _) = hankel1_both(k0 * r)?;
                    *slot = coeff * h0;
                }
                Ok(())
            })?;

        let n2 = 2 * m;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n2);
        let inverse = planner.plan_fft_inverse(n2);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n2 * n2];
        for i in 0..n2 {
            for j in 0..n2 {
                // offset M has no partner in an M-cell grid
                let (Some(dy), Some(dx)) = (wrap(i, m), wrap(j, m)) else { continue };
                spectrum[i * n2 + j] = stencil[dy * m + dx];
            }
        }
        fft2(&mut spectrum, n2, &forward);
        let scale = 1.0 / (n2 * n2) as f64;
        for z in spectrum.iter_mut() {
            *z *= scale;
        }

        Ok(GreensVolume {
            grid,
            k0,
            diagonal,
            stencil,
            spectrum,
            forward,
            inverse,
            dense: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid.cells
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len() == 0
    }

    pub fn wavenumber(&self) -> f64 {
        self.k0
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.cell_area()
    }

    pub fn equivalent_radius(&self) -> f64 {
        self.grid.equivalent_radius()
    }

    pub fn diagonal(&self) -> Complex64 {
        self.diagonal
    }

    /// Entry `G_D[n, n']`.
    pub fn entry(&self, n: usize, np: usize) -> Complex64 {
        if n == np {
            return self.diagonal;
        }
        let m = self.grid.cells;
        let dy = (n / m).abs_diff(np / m);
        let dx = (n % m).abs_diff(np % m);
        self.stencil[dy * m + dx]
    }

    pub fn has_dense(&self) -> bool {
        self.grid.cells <= DENSE_MAX_GRID
    }

    /// Row-major dense `M^2 x M^2` matrix, built on first use. Only available
    /// for grids up to [`DENSE_MAX_GRID`].
    pub fn dense(&self) -> Result<&[Complex64]> {
        if !self.has_dense() {
            return Err(Error::Config(format!(
                "dense G_D is only kept for grids <= {DENSE_MAX_GRID}, this one is {}",
                self.grid.cells
            )));
        }
        Ok(self.dense.get_or_init(|| {
            let n = self.len();
            let mut d = vec![Complex64::new(0.0, 0.0); n * n];
            d.par_chunks_mut(n).enumerate().for_each(|(row, out)| {
                for (col, slot) in out.iter_mut().enumerate() {
                    *slot = self.entry(row, col);
                }
            });
            d
        }))
    }

    pub fn apply(&self, v: &[Complex64], path: ApplyPath) -> Result<Vec<Complex64>> {
        let n = self.len();
        if v.len() != n {
            return Err(Error::shape("G_D apply", n, v.len()));
        }
        match path {
            ApplyPath::Dense => {
                let d = self.dense()?;
                Ok(d.par_chunks(n)
                    .map(|row| row.iter().zip(v).map(|(g, x)| g * x).sum())
                    .collect())
            }
            ApplyPath::Fft => Ok(self.apply_fft(v)),
        }
    }

    fn apply_fft(&self, v: &[Complex64]) -> Vec<Complex64> {
        let m = self.grid.cells;
        let n2 = 2 * m;
        let mut buf = vec![Complex64::new(0.0, 0.0); n2 * n2];
        for r in 0..m {
            buf[r * n2..r * n2 + m].copy_from_slice(&v[r * m..(r + 1) * m]);
        }
        fft2(&mut buf, n2, &self.forward);
        for (b, k) in buf.iter_mut().zip(&self.spectrum) {
            *b *= k;
        }
        fft2(&mut buf, n2, &self.inverse);
        let mut out = Vec::with_capacity(m * m);
        for r in 0..m {
            for c in 0..m {
                out.push(buf[r * n2 + c] + self.diagonal * v[r * m + c]);
            }
        }
        out
    }

    /// Applies `G_D` to every column, in parallel over columns.
    pub fn apply_columns(&self, x: &CMatrix, path: ApplyPath) -> Result<CMatrix> {
        let cols: Result<Vec<Vec<Complex64>>> = (0..x.cols())
            .into_par_iter()
            .map(|p| self.apply(x.col(p), path))
            .collect();
        CMatrix::from_columns(x.rows(), cols?)
    }
}

/// Offset encoded by circulant index `i` of a length-`2m` axis.
fn wrap(i: usize, m: usize) -> Option<usize> {
    match i.cmp(&m) {
        std::cmp::Ordering::Less => Some(i),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(2 * m - i),
    }
}

/// In-place unnormalized 2-D FFT of an `n x n` row-major buffer.
fn fft2(buf: &mut [Complex64], n: usize, plan: &Arc<dyn Fft<f64>>) {
    plan.process(buf);
    transpose_square(buf, n);
    plan.process(buf);
    transpose_square(buf, n);
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Receiver operator `G_S`, stored densely (row `q` contiguous).
#[derive(Debug, Clone)]
pub struct GreensSurface {
    grid: Grid,
    receivers: Vec<[f64; 2]>,
    matrix: Vec<Complex64>,
}

impl GreensSurface {
    pub fn assemble(config: &SceneConfig, cells: usize) -> Result<Self> {
        config.validate()?;
        Self::with_receivers(config, cells, config.receiver_positions())
    }

    /// Assembles for arbitrary receiver positions, e.g. a masked arc.
    pub fn with_receivers(config: &SceneConfig, cells: usize, receivers: Vec<[f64; 2]>) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Config(format!("G_S needs at least 2 cells per side, got {cells}")));
        }
        let half = 0.5 * config.doi_side_m;
        if let Some(r) = receivers.iter().find(|r| r[0].abs() <= half && r[1].abs() <= half) {
            return Err(Error::Config(format!("receiver at ({}, {}) is inside the DOI", r[0], r[1])));
        }
        let grid = config.grid(cells);
        let k0 = config.wavenumber();
        let coeff = coupling(k0, grid.equivalent_radius())?;
        let centers = grid.centers();
        let n = grid.len();
        let mut matrix = vec![Complex64::new(0.0, 0.0); receivers.len() * n];
        matrix
            .par_chunks_mut(n)
            .zip(receivers.par_iter())
            .try_for_each(|(row, rx)| -> Result<()> {
                for (slot, c) in row.iter_mut().zip(&centers) {
                    let d = ((rx[0] - c[0]).powi(2) + (rx[1] - c[1]).powi(2)).sqrt();
                    let (h0, _) = hankel1_both(k0 * d)?;
                    *slot = coeff * h0;
                }
                Ok(())
            })?;
        Ok(GreensSurface { grid, receivers, matrix })
    }

    pub fn n_rx(&self) -> usize {
        self.receivers.len()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn receivers(&self) -> &[[f64; 2]] {
        &self.receivers
    }

    pub fn entry(&self, q: usize, n: usize) -> Complex64 {
        self.matrix[q * self.grid.len() + n]
    }

    pub fn row(&self, q: usize) -> &[Complex64] {
        let n = self.grid.len();
        &self.matrix[q * n..(q + 1) * n]
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.grid.len();
        if v.len() != n {
            return Err(Error::shape("G_S apply", n, v.len()));
        }
        Ok(self
            .matrix
            .chunks(n)
            .map(|row| row.iter().zip(v).map(|(g, x)| g * x).sum())
            .collect())
    }

    /// `G_S^H w`.
    pub fn adjoint_apply(&self, w: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.grid.len();
        if w.len() != self.n_rx() {
            return Err(Error::shape("G_S adjoint apply", self.n_rx(), w.len()));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (row, wq) in self.matrix.chunks(n).zip(w) {
            for (o, g) in out.iter_mut().zip(row) {
                *o += g.conj() * wq;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::dot;

    fn cfg() -> SceneConfig {
        SceneConfig::default()
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<Complex64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn diagonal_is_constant_and_matrix_symmetric() {
        let gd = GreensVolume::assemble(&cfg(), 6).unwrap();
        let n = gd.len();
        for i in 0..n {
            assert_eq!(gd.entry(i, i), gd.diagonal());
            for j in 0..n {
                assert_eq!(gd.entry(i, j), gd.entry(j, i));
            }
        }
    }

    #[test]
    fn self_term_matches_scalar_formula() {
        let c = cfg();
        let gd = GreensVolume::assemble(&c, 64).unwrap();
        let k0 = 2.0 * std::f64::consts::PI * 3.0e9 / 2.997_924_58e8;
        let s = (0.2f64 / 64.0).powi(2);
        let a = (s / std::f64::consts::PI).sqrt();
        let x = k0 * a;
        let j1 = bessel_j(Order::One, x).unwrap();
        let y1 = crate::special::bessel_y(Order::One, x).unwrap();
        // (i k0 pi a / 2)(J1 + i Y1) - 1
        let pref = k0 * std::f64::consts::PI * a / 2.0;
        let expect = Complex64::new(-pref * y1 - 1.0, pref * j1);
        assert!((gd.diagonal() - expect).norm() <= 1e-14);
    }

    #[test]
    fn zero_in_zero_out() {
        let gd = GreensVolume::assemble(&cfg(), 8).unwrap();
        let z = vec![Complex64::new(0.0, 0.0); 64];
        assert!(gd.apply(&z, ApplyPath::Fft).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(gd.apply(&z, ApplyPath::Dense).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(gd.apply(&z[..10], ApplyPath::Fft).is_err());
    }

    #[test]
    fn fft_matches_dense_small() {
        let gd = GreensVolume::assemble(&cfg(), 7).unwrap();
        let v = rand_vec(49, 3);
        let a = gd.apply(&v, ApplyPath::Dense).unwrap();
        let b = gd.apply(&v, ApplyPath::Fft).unwrap();
        let err: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / scale < 1e-12);
    }

    #[test]
    fn dense_refused_above_threshold() {
        let gd = GreensVolume::assemble(&cfg(), 65).unwrap();
        assert!(gd.dense().is_err());
        assert!(gd.apply(&vec![Complex64::new(0.0, 0.0); 65 * 65], ApplyPath::Dense).is_err());
    }

    #[test]
    fn surface_adjoint_consistency() {
        let gs = GreensSurface::assemble(&cfg(), 8).unwrap();
        let v = rand_vec(64, 1);
        let w = rand_vec(32, 2);
        let lhs = dot(&w, &gs.apply(&v).unwrap());
        let rhs = dot(&gs.adjoint_apply(&w).unwrap(), &v);
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn surface_unit_vectors_pick_columns_and_rows() {
        let gs = GreensSurface::assemble(&cfg(), 8).unwrap();
        let mut e = vec![Complex64::new(0.0, 0.0); 64];
        e[11] = Complex64::new(1.0, 0.0);
        let col = gs.apply(&e).unwrap();
        for q in 0..32 {
            assert_eq!(col[q], gs.entry(q, 11));
        }
        let mut w = vec![Complex64::new(0.0, 0.0); 32];
        w[5] = Complex64::new(1.0, 0.0);
        let row = gs.adjoint_apply(&w).unwrap();
        for n in 0..64 {
            assert_eq!(row[n], gs.entry(5, n).conj());
        }
        assert!(gs.adjoint_apply(&vec![Complex64::new(0.0, 0.0); 32]).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn receiver_inside_doi_is_rejected() {
        let c = cfg();
        assert!(GreensSurface::with_receivers(&c, 8, vec![[0.05, 0.0]]).is_err());
        assert!(GreensSurface::with_receivers(&c, 8, vec![[0.5, 0.0]]).is_ok());
    }

    #[test]
    fn surface_entries_finite_and_decaying() {
        let gs = GreensSurface::assemble(&cfg(), 16).unwrap();
        assert!((0..32).all(|q| gs.row(q).iter().all(|z| z.re.is_finite() && z.im.is_finite())));
        // |H0| decays monotonically over the distances spanned by the ring
        let k0 = cfg().wavenumber();
        let coeff = coupling(k0, gs.grid().equivalent_radius()).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let d = 1.67 - 0.15 + 0.3 * i as f64 / 199.0;
            let mag = (coeff * hankel1_both(k0 * d).unwrap().0).norm();
            assert!(mag < last);
            last = mag;
        }
    }
}
