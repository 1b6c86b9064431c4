//! Dense complex matrices and multi-incidence field sets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-major complex matrix. Column `p` of a field matrix holds incidence `p`,
/// so the raw storage is exactly `vec(X)` in incidence-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Wraps column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("CMatrix", rows * cols, data.len()));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[Complex64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("CMatrix", rows * cols, data.len()));
        }
        let mut m = CMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[c * rows + r] = data[r * cols + c];
            }
        }
        Ok(m)
    }

    pub fn from_columns(rows: usize, columns: Vec<Vec<Complex64>>) -> Result<Self> {
        let cols = columns.len();
        let mut data = Vec::with_capacity(rows * cols);
        for col in columns {
            if col.len() != rows {
                return Err(Error::shape("CMatrix column", rows, col.len()));
            }
            data.extend(col);
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[c * self.rows + r] = v;
    }

    pub fn col(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks(self.rows.max(1)).take(self.cols)
    }

    pub fn columns_mut(&mut self) -> impl Iterator<Item = &mut [Complex64]> {
        let cols = self.cols;
        self.data.chunks_mut(self.rows.max(1)).take(cols)
    }

    /// `vec(X)`: columns stacked in incidence order.
    pub fn as_vec(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn to_row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.get(r, c));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, alpha: Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| alpha * z).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "matrix subtraction", |a, b| a - b)
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "matrix addition", |a, b| a + b)
    }

    fn zip_with(
        &self,
        other: &CMatrix,
        context: &'static str,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<CMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Incident,
    Total,
    Scattered,
}

/// Fields for every incidence: `M^2 x N_i` (incident, total) or `N_r x N_i`
/// (scattered). Column `p` is incidence `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub kind: FieldKind,
    pub values: CMatrix,
}

impl FieldSet {
    pub fn new(kind: FieldKind, values: CMatrix) -> Self {
        FieldSet { kind, values }
    }

    pub fn n_incidences(&self) -> usize {
        self.values.cols()
    }

    pub fn n_points(&self) -> usize {
        self.values.rows()
    }

    pub fn column(&self, p: usize) -> &[Complex64] {
        self.values.col(p)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.frobenius_norm()
    }

    pub(crate) fn expect(&self, kind: FieldKind, context: &'static str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::shape(context, format!("{kind:?} field"), format!("{:?} field", self.kind)));
        }
        Ok(())
    }
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `sum conj(a_i) b_i`.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
