//! Implicit linear operators and the Krylov solvers that consume them.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{axpy, dot, norm, norm_sqr};

pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>>;
    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Row-major dense matrix as an operator. Used for small problems and as a
/// reference in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseOperator", rows * cols, data.len()));
        }
        Ok(DenseOperator { rows, cols, data })
    }

    /// Materializes any operator column by column.
    pub fn from_operator(op: &dyn LinearOperator) -> Result<Self> {
        let (rows, cols) = (op.rows(), op.cols());
        let mut data = vec![Complex64::new(0.0, 0.0); rows * cols];
        let mut e = vec![Complex64::new(0.0, 0.0); cols];
        for j in 0..cols {
            e[j] = Complex64::new(1.0, 0.0);
            let col = op.apply(&e)?;
            for (i, v) in col.into_iter().enumerate() {
                data[i * cols + j] = v;
            }
            e[j] = Complex64::new(0.0, 0.0);
        }
        Ok(DenseOperator { rows, cols, data })
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(Error::shape("dense apply", self.cols, x.len()));
        }
        Ok(self
            .data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        if y.len() != self.rows {
            return Err(Error::shape("dense adjoint", self.rows, y.len()));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (row, yi) in self.data.chunks(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * yi;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutcome {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// BiCGSTAB for a square system `A x = b`, with `A` given as a closure.
/// Restarts with a fresh shadow residual on breakdown.
pub fn bicgstab<F>(apply: F, b: &[Complex64], x0: Vec<Complex64>, opts: KrylovOptions) -> Result<KrylovOutcome>
where
    F: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let b_norm = norm(b);
    let n = b.len();
    if b_norm == 0.0 {
        return Ok(KrylovOutcome {
            x: vec![zero; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = x0;
    let residual = |x: &[Complex64]| -> Result<Vec<Complex64>> {
        let ax = apply(x)?;
        Ok(b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect())
    };
    let mut r = residual(&x)?;
    let mut rel = norm(&r) / b_norm;
    let mut iterations = 0;
    'restart: while iterations < opts.max_iter {
        if rel <= opts.tol {
            break;
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (one, one, one);
        let mut v = vec![zero; n];
        let mut p = vec![zero; n];
        while iterations < opts.max_iter {
            iterations += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new.norm() <= f64::EPSILON * f64::EPSILON * b_norm * b_norm {
                r = residual(&x)?;
                rel = norm(&r) / b_norm;
                continue 'restart;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            v = apply(&p)?;
            let denom = dot(&r_hat, &v);
            if denom.norm() == 0.0 {
                r = residual(&x)?;
                rel = norm(&r) / b_norm;
                continue 'restart;
            }
            alpha = rho_new / denom;
            let mut s = r.clone();
            axpy(-alpha, &v, &mut s);
            if norm(&s) / b_norm <= opts.tol {
                axpy(alpha, &p, &mut x);
                r = residual(&x)?;
                rel = norm(&r) / b_norm;
                if rel <= opts.tol {
                    break 'restart;
                }
                continue 'restart;
            }
            let t = apply(&s)?;
            let tt = norm_sqr(&t);
            if tt == 0.0 {
                axpy(alpha, &p, &mut x);
                r = residual(&x)?;
                rel = norm(&r) / b_norm;
                continue 'restart;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            rho = rho_new;
            rel = norm(&r) / b_norm;
            if rel <= opts.tol {
                // guard against drift of the recursively updated residual
                r = residual(&x)?;
                rel = norm(&r) / b_norm;
                if rel <= opts.tol {
                    break 'restart;
                }
                continue 'restart;
            }
            if omega.norm() == 0.0 {
                continue 'restart;
            }
        }
    }
    if !(rel <= opts.tol) {
        return Err(Error::NoConvergence {
            solver: "BiCGSTAB",
            iterations,
            residual: rel,
        });
    }
    Ok(KrylovOutcome {
        x,
        iterations,
        relative_residual: rel,
    })
}

/// Conjugate gradients on the regularized normal equations
/// `(A^H A + lambda I) x = A^H b`, in CGLS form (never forms `A^H A`).
///
/// Convergence is measured as `||A^H (b - A x) - lambda x|| / ||A^H b||`.
pub fn cgls(op: &dyn LinearOperator, b: &[Complex64], lambda: f64, opts: KrylovOptions) -> Result<KrylovOutcome> {
    if b.len() != op.rows() {
        return Err(Error::shape("CGLS right-hand side", op.rows(), b.len()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = op.cols();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    let mut s = op.adjoint(&r)?;
    let s0 = norm(&s);
    if s0 == 0.0 {
        return Ok(KrylovOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut p = s.clone();
    let mut gamma = norm_sqr(&s);
    let mut rel = 1.0;
    for it in 1..=opts.max_iter {
        let q = op.apply(&p)?;
        let delta = norm_sqr(&q) + lambda * norm_sqr(&p);
        if delta == 0.0 {
            break;
        }
        let alpha = gamma / delta;
        axpy(Complex64::new(alpha, 0.0), &p, &mut x);
        axpy(Complex64::new(-alpha, 0.0), &q, &mut r);
        s = op.adjoint(&r)?;
        if lambda > 0.0 {
            axpy(Complex64::new(-lambda, 0.0), &x, &mut s);
        }
        let gamma_new = norm_sqr(&s);
        rel = gamma_new.sqrt() / s0;
        if rel <= opts.tol {
            return Ok(KrylovOutcome {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_new;
    }
    Err(Error::NoConvergence {
        solver: "CGLS",
        iterations: opts.max_iter,
        residual: rel,
    })
}

/// Largest eigenvalue of `A^H A` (squared spectral norm) by power iteration
/// from a constant start vector. Stops when successive estimates agree to
/// `tol` relative, or after `max_iter` steps.
pub fn spectral_norm_sqr(op: &dyn LinearOperator, tol: f64, max_iter: usize) -> Result<f64> {
    let n = op.cols();
    if n == 0 {
        return Ok(0.0);
    }
    let mut v = vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = op.adjoint(&op.apply(&v)?)?;
        let next = norm(&w);
        if next == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / next;
        }
        let converged = (next - estimate).abs() <= tol * next;
        estimate = next;
        if converged {
            break;
        }
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseOperator {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        DenseOperator::new(rows, cols, data).unwrap()
    }

    #[test]
    fn bicgstab_solves_diagonally_dominant_system() {
        let mut a = random_dense(20, 20, 4);
        for i in 0..20 {
            a.data[i * 20 + i] += Complex64::new(25.0, 3.0);
        }
        let x_true: Vec<Complex64> = (0..20).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let b = a.apply(&x_true).unwrap();
        let out = bicgstab(|x| a.apply(x), &b, vec![Complex64::new(0.0, 0.0); 20], KrylovOptions { tol: 1e-12, max_iter: 200 }).unwrap();
        for (u, v) in out.x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-9);
        }
    }

    #[test]
    fn bicgstab_reports_nonconvergence() {
        let mut a = random_dense(30, 30, 9);
        for i in 0..30 {
            a.data[i * 30 + i] += Complex64::new(1.0, 0.0);
        }
        let b = vec![Complex64::new(1.0, 0.0); 30];
        let err = bicgstab(|x| a.apply(x), &b, vec![Complex64::new(0.0, 0.0); 30], KrylovOptions { tol: 1e-14, max_iter: 3 });
        assert!(matches!(err, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn cgls_zero_rhs() {
        let a = random_dense(6, 4, 1);
        let out = cgls(&a, &[Complex64::new(0.0, 0.0); 6], 0.1, KrylovOptions { tol: 1e-8, max_iter: 10 }).unwrap();
        assert!(out.x.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let mut data = vec![Complex64::new(0.0, 0.0); 9];
        data[0] = Complex64::new(1.0, 0.0);
        data[4] = Complex64::new(0.0, 3.0);
        data[8] = Complex64::new(2.0, 0.0);
        let a = DenseOperator::new(3, 3, data).unwrap();
        let s = spectral_norm_sqr(&a, 1e-14, 500).unwrap();
        assert!((s - 9.0).abs() < 1e-10, "{s}");
    }

    #[test]
    fn dense_operator_adjoint() {
        let a = random_dense(5, 3, 2);
        let x = vec![Complex64::new(1.0, 2.0), Complex64::new(-1.0, 0.5), Complex64::new(0.0, 1.0)];
        let y = vec![Complex64::new(0.3, -1.0); 5];
        let lhs = dot(&y, &a.apply(&x).unwrap());
        let rhs = dot(&a.adjoint(&y).unwrap(), &x);
        assert!((lhs - rhs).norm() < 1e-12);
        let back = DenseOperator::from_operator(&a).unwrap();
        assert_eq!(back, a);
    }
}
