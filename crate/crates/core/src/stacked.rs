//! The stacked data operator
//!
//! ```text
//! A = [ G_S diag(E^t_1) ; ... ; G_S diag(E^t_Ni) ]      (N_r N_i x M^2)
//! ```
//!
//! mapping a contrast (or contrast variation) to all incidences' scattered
//! fields at once. Output vectors are incidence-major: entry `p * N_r + q` is
//! receiver `q` under incidence `p`, i.e. `vec` of an `N_r x N_i` matrix.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{CMatrix, FieldSet};
use crate::greens::GreensSurface;
use crate::linop::LinearOperator;

pub struct StackedOperator<'a> {
    gs: &'a GreensSurface,
    etot: &'a CMatrix,
}

impl<'a> StackedOperator<'a> {
    pub fn new(etot: &'a FieldSet, gs: &'a GreensSurface) -> Result<Self> {
        Self::from_matrix(&etot.values, gs)
    }

    pub fn from_matrix(etot: &'a CMatrix, gs: &'a GreensSurface) -> Result<Self> {
        if etot.rows() != gs.n_cells() {
            return Err(Error::shape("stacked operator", gs.n_cells(), etot.rows()));
        }
        Ok(StackedOperator { gs, etot })
    }

    pub fn n_incidences(&self) -> usize {
        self.etot.cols()
    }
}

impl LinearOperator for StackedOperator<'_> {
    fn rows(&self) -> usize {
        self.gs.n_rx() * self.etot.cols()
    }

    fn cols(&self) -> usize {
        self.gs.n_cells()
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols() {
            return Err(Error::shape("stacked apply", self.cols(), x.len()));
        }
        let blocks: Result<Vec<Vec<Complex64>>> = (0..self.etot.cols())
            .into_par_iter()
            .map(|p| {
                let j: Vec<Complex64> = self.etot.col(p).iter().zip(x).map(|(e, v)| e * v).collect();
                self.gs.apply(&j)
            })
            .collect();
        Ok(blocks?.concat())
    }

    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        if y.len() != self.rows() {
            return Err(Error::shape("stacked adjoint", self.rows(), y.len()));
        }
        let nr = self.gs.n_rx();
        let n = self.gs.n_cells();
        let parts: Result<Vec<Vec<Complex64>>> = (0..self.etot.cols())
            .into_par_iter()
            .map(|p| {
                let back = self.gs.adjoint_apply(&y[p * nr..(p + 1) * nr])?;
                Ok(self.etot.col(p).iter().zip(back).map(|(e, b)| e.conj() * b).collect())
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for part in parts? {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        Ok(out)
    }
}

/// Materialized `A`, row-major (`N_r N_i x M^2`).
pub fn dense_rows(op: &StackedOperator) -> Vec<Complex64> {
    let n = op.gs.n_cells();
    let mut out = Vec::with_capacity(op.rows() * n);
    for p in 0..op.etot.cols() {
        let e = op.etot.col(p);
        for q in 0..op.gs.n_rx() {
            out.extend(op.gs.row(q).iter().zip(e).map(|(g, v)| g * v));
        }
    }
    out
}

/// `vec(X)` of an `N_r x N_i` matrix (incidence-major).
pub fn vec_matrix(m: &CMatrix) -> Vec<Complex64> {
    m.as_vec().to_vec()
}

/// Inverse of [`vec_matrix`].
pub fn devec(v: Vec<Complex64>, rows: usize, cols: usize) -> Result<CMatrix> {
    CMatrix::from_col_major(rows, cols, v)
}
