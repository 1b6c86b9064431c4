//! Classical reconstructions: back-propagation (BPS), the Born iterative
//! method (BIM) and its variational form (VBIM).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dot, norm, norm_sqr, CMatrix, FieldKind, FieldSet};
use crate::forward::{apply_data_operator, solve_total_field_with, SolveMethod, FORWARD_MAX_ITER, FORWARD_TOL};
use crate::greens::{ApplyPath, GreensSurface, GreensVolume};
use crate::linop::{cgls, spectral_norm_sqr, KrylovOptions, LinearOperator};
use crate::scene::ContrastMap;
use crate::stacked::{dense_rows, StackedOperator};

/// Measured data plus the operators of the inversion grid.
#[derive(Clone, Copy)]
pub struct InversionProblem<'a> {
    pub es: &'a FieldSet,
    pub einc: &'a FieldSet,
    pub gd: &'a GreensVolume,
    pub gs: &'a GreensSurface,
}

impl<'a> InversionProblem<'a> {
    pub fn new(es: &'a FieldSet, einc: &'a FieldSet, gd: &'a GreensVolume, gs: &'a GreensSurface) -> Result<Self> {
        es.expect(FieldKind::Scattered, "inversion")?;
        einc.expect(FieldKind::Incident, "inversion")?;
        if einc.n_points() != gd.len() || gs.n_cells() != gd.len() {
            return Err(Error::shape(
                "inversion",
                format!("{} cells", gd.len()),
                format!("incident {} / G_S {}", einc.n_points(), gs.n_cells()),
            ));
        }
        if es.n_points() != gs.n_rx() || es.n_incidences() != einc.n_incidences() {
            return Err(Error::shape(
                "inversion",
                format!("{} x {} scattered field", gs.n_rx(), einc.n_incidences()),
                format!("{} x {}", es.n_points(), es.n_incidences()),
            ));
        }
        Ok(InversionProblem { es, einc, gd, gs })
    }

    pub fn cells(&self) -> usize {
        self.gd.cells()
    }
}

/// `||E^s - G_S diag(chi) E^t||_F / ||E^s||_F`; zero when `E^s = 0` and the
/// prediction vanishes too.
pub fn data_residual(es: &FieldSet, chi: &ContrastMap, etot: &FieldSet, gs: &GreensSurface) -> Result<f64> {
    let pred = apply_data_operator(chi.values(), &etot.values, gs)?;
    let diff = es.values.sub(&pred)?.frobenius_norm();
    let scale = es.frobenius_norm();
    Ok(if scale == 0.0 {
        if diff == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        diff / scale
    })
}

/// `min ||A x - b||^2 + lambda ||x||^2`.
pub struct RegularizedLsProblem<'a> {
    pub op: &'a dyn LinearOperator,
    pub rhs: &'a [Complex64],
    pub lambda: f64,
}

impl<'a> RegularizedLsProblem<'a> {
    pub fn new(op: &'a dyn LinearOperator, rhs: &'a [Complex64], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if rhs.len() != op.rows() {
            return Err(Error::shape("regularized LS", op.rows(), rhs.len()));
        }
        Ok(RegularizedLsProblem { op, rhs, lambda })
    }
}

pub const TIKHONOV_TOL: f64 = 1e-8;
pub const TIKHONOV_MAX_ITER: usize = 500;

/// Solves `(A^H A + lambda I) x = A^H b` by CGLS.
pub fn tikhonov_solve(problem: &RegularizedLsProblem, tol: f64, max_iter: usize) -> Result<Vec<Complex64>> {
    cgls(problem.op, problem.rhs, problem.lambda, KrylovOptions { tol, max_iter }).map(|o| o.x)
}

/// Direct Tikhonov solve on the smaller Gram matrix: `A^H (A A^H + lambda I)^-1 b`
/// when `A` is wide, `(A^H A + lambda I)^-1 A^H b` otherwise.
pub fn tikhonov_direct(rows: usize, cols: usize, a: &[Complex64], b: &[Complex64], lambda: f64) -> Result<Vec<Complex64>> {
    if a.len() != rows * cols || b.len() != rows {
        return Err(Error::shape("direct Tikhonov", format!("{rows} x {cols}"), format!("{} / rhs {}", a.len(), b.len())));
    }
    let wide = rows <= cols;
    let k = if wide { rows } else { cols };
    let row = |i: usize| &a[i * cols..(i + 1) * cols];
    let mut gram = DMatrix::<Complex64>::zeros(k, k);
    if wide {
        for i in 0..k {
            for j in 0..=i {
                let v: Complex64 = row(i).iter().zip(row(j)).map(|(x, y)| x * y.conj()).sum();
                gram[(i, j)] = v;
                gram[(j, i)] = v.conj();
            }
        }
    } else {
        for r in 0..rows {
            let ar = row(r);
            for i in 0..k {
                let ci = ar[i].conj();
                for j in 0..=i {
                    gram[(i, j)] += ci * ar[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                gram[(j, i)] = gram[(i, j)].conj();
            }
        }
    }
    for i in 0..k {
        gram[(i, i)] += lambda;
    }
    let rhs = if wide {
        DVector::from_column_slice(b)
    } else {
        let mut ahb = vec![Complex64::new(0.0, 0.0); cols];
        for (r, br) in b.iter().enumerate() {
            for (o, v) in ahb.iter_mut().zip(row(r)) {
                *o += v.conj() * br;
            }
        }
        DVector::from_vec(ahb)
    };
    let z = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("regularized Gram matrix is singular".into()))?,
    };
    let x: Vec<Complex64> = if wide {
        let mut x = vec![Complex64::new(0.0, 0.0); cols];
        for (r, zr) in z.iter().enumerate() {
            for (o, v) in x.iter_mut().zip(row(r)) {
                *o += v.conj() * zr;
            }
        }
        x
    } else {
        z.iter().copied().collect()
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("direct Tikhonov solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Per-incidence scalar of the back-propagated current.
///
/// Returns `(gamma, G_S^H E^s_p)`, with `gamma = 0` for a zero measurement.
pub fn bps_coefficient(es_p: &[Complex64], gs: &GreensSurface) -> Result<(Complex64, Vec<Complex64>)> {
    let back = gs.adjoint_apply(es_p)?;
    let w = gs.apply(&back)?;
    let ww = norm_sqr(&w);
    let gamma = if ww == 0.0 { Complex64::new(0.0, 0.0) } else { dot(&w, es_p) / ww };
    Ok((gamma, back))
}

/// Non-iterative back-propagation estimate. Returns the clamped contrast and
/// the matching total field `E^i + G_D J`.
pub fn bps(problem: &InversionProblem) -> Result<(ContrastMap, FieldSet)> {
    let n = problem.gd.len();
    let parts: Result<Vec<(Vec<Complex64>, Vec<Complex64>)>> = (0..problem.es.n_incidences())
        .into_par_iter()
        .map(|p| {
            let (gamma, back) = bps_coefficient(problem.es.column(p), problem.gs)?;
            let current: Vec<Complex64> = back.iter().map(|b| gamma * b).collect();
            let scattered = problem.gd.apply(&current, ApplyPath::Fft)?;
            let total = problem.einc.column(p).iter().zip(scattered).map(|(a, b)| a + b).collect();
            Ok((current, total))
        })
        .collect();
    let parts = parts?;
    let mut num = vec![Complex64::new(0.0, 0.0); n];
    let mut den = vec![0.0; n];
    for (current, total) in &parts {
        for i in 0..n {
            num[i] += current[i] * total[i].conj();
            den[i] += total[i].norm_sqr();
        }
    }
    let chi: Vec<Complex64> = num
        .iter()
        .zip(&den)
        .map(|(a, d)| if *d == 0.0 { Complex64::new(0.0, 0.0) } else { a / d })
        .collect();
    let etot = CMatrix::from_columns(n, parts.into_iter().map(|(_, t)| t).collect())?;
    Ok((ContrastMap::clamped(problem.cells(), chi)?, FieldSet::new(FieldKind::Total, etot)))
}

/// How `lambda` enters the normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScaling {
    /// `lambda * I`.
    Absolute,
    /// `lambda * ||A||_2^2 * I`, so the weight does not depend on the units of
    /// the fields.
    Relative,
}

/// Solver for the linear least-squares step inside BIM/VBIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsSolver {
    /// CGLS with the implicit operator.
    Cg,
    /// Dense solve on the smaller Gram matrix.
    Direct,
    /// `Direct` while the Gram matrix has at most [`DIRECT_MAX_GRAM`] rows, else `Cg`.
    Auto,
}

pub const DIRECT_MAX_GRAM: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Bps,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    pub lambda: f64,
    pub lambda_scaling: LambdaScaling,
    pub iters: usize,
    /// Stop once the relative change of the data residual drops below this.
    pub early_stop: Option<f64>,
    pub ls_solver: LsSolver,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub forward: SolveMethod,
    pub forward_tol: f64,
    /// Zero negative real/imaginary parts after every update.
    pub clamp: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            lambda: 5e-4,
            lambda_scaling: LambdaScaling::Relative,
            iters: 20,
            early_stop: Some(1e-4),
            ls_solver: LsSolver::Auto,
            cg_tol: TIKHONOV_TOL,
            cg_max_iter: TIKHONOV_MAX_ITER,
            forward: SolveMethod::Iterative,
            forward_tol: FORWARD_TOL,
            clamp: true,
        }
    }
}

impl InversionOptions {
    fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iters must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn hyperparameters(&self) -> serde_json::Map<String, serde_json::Value> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => serde_json::Map::new(),
        }
    }

    fn effective_lambda(&self, op: &StackedOperator) -> Result<f64> {
        Ok(match self.lambda_scaling {
            LambdaScaling::Absolute => self.lambda,
            LambdaScaling::Relative => self.lambda * spectral_norm_sqr(op, 1e-6, 200)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub contrast: ContrastMap,
    pub data_residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub enum Stop {
    Completed,
    EarlyStop { iteration: usize },
    Aborted { iteration: usize, error: Error },
}

#[derive(Debug)]
pub struct IterateTrace {
    pub method: String,
    pub hyperparameters: serde_json::Map<String, serde_json::Value>,
    pub entries: Vec<TraceEntry>,
    /// Total field consistent with the last entry's contrast.
    pub final_total_field: Option<FieldSet>,
    pub stop: Stop,
}

impl IterateTrace {
    pub fn new(method: &str, hyperparameters: serde_json::Map<String, serde_json::Value>) -> Self {
        IterateTrace {
            method: method.to_string(),
            hyperparameters,
            entries: Vec::new(),
            final_total_field: None,
            stop: Stop::Completed,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn final_contrast(&self) -> Option<&ContrastMap> {
        self.entries.last().map(|e| &e.contrast)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.data_residual).collect()
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.stop, Stop::Aborted { .. })
    }

    /// Turns an aborted trace into its error, tagged with the iteration.
    pub fn into_result(self) -> Result<IterateTrace> {
        match self.stop {
            Stop::Aborted { iteration, error } => Err(Error::at_iteration(iteration, error)),
            _ => Ok(self),
        }
    }
}

/// Starting contrast for BIM/VBIM.
pub fn initial_contrast(problem: &InversionProblem, init: &Init) -> Result<ContrastMap> {
    match init {
        Init::Bps => Ok(bps(problem)?.0),
        Init::Zero => Ok(ContrastMap::zeros(problem.cells())),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Variant {
    Bim,
    Vbim,
}

pub fn bim(problem: &InversionProblem, init: &ContrastMap, opts: &InversionOptions) -> Result<IterateTrace> {
    born_iterations(problem, init, opts, Variant::Bim)
}

pub fn vbim(problem: &InversionProblem, init: &ContrastMap, opts: &InversionOptions) -> Result<IterateTrace> {
    born_iterations(problem, init, opts, Variant::Vbim)
}

/// One contrast update from the current total field. Returns the new contrast
/// (clamped) and the unclamped solve result.
fn contrast_update(
    problem: &InversionProblem,
    chi: &ContrastMap,
    etot: &FieldSet,
    opts: &InversionOptions,
    variant: Variant,
) -> Result<(ContrastMap, Vec<Complex64>)> {
    let op = StackedOperator::new(etot, problem.gs)?;
    let rhs: Vec<Complex64> = match variant {
        Variant::Bim => problem.es.values.as_vec().to_vec(),
        Variant::Vbim => {
            let predicted = apply_data_operator(chi.values(), &etot.values, problem.gs)?;
            problem.es.values.sub(&predicted)?.into_vec()
        }
    };
    let lambda = opts.effective_lambda(&op)?;
    let ls = RegularizedLsProblem::new(&op, &rhs, lambda)?;
    let direct = match opts.ls_solver {
        LsSolver::Cg => false,
        LsSolver::Direct => true,
        LsSolver::Auto => op.rows().min(op.cols()) <= DIRECT_MAX_GRAM,
    };
    let x = if direct {
        tikhonov_direct(op.rows(), op.cols(), &dense_rows(&op), &rhs, lambda)?
    } else {
        tikhonov_solve(&ls, opts.cg_tol, opts.cg_max_iter)?
    };
    let next = match variant {
        Variant::Bim => x.clone(),
        Variant::Vbim => chi.values().iter().zip(&x).map(|(a, b)| a + b).collect(),
    };
    let next = if opts.clamp {
        ContrastMap::clamped(problem.cells(), next)?
    } else {
        ContrastMap::unconstrained(problem.cells(), next)?
    };
    Ok((next, x))
}

fn born_iterations(
    problem: &InversionProblem,
    init: &ContrastMap,
    opts: &InversionOptions,
    variant: Variant,
) -> Result<IterateTrace> {
    opts.validate()?;
    if init.len() != problem.gd.len() {
        return Err(Error::shape("initial contrast", problem.gd.len(), init.len()));
    }
    let name = if variant == Variant::Bim { "bim" } else { "vbim" };
    let mut trace = IterateTrace::new(name, opts.hyperparameters());
    let krylov = KrylovOptions {
        tol: opts.forward_tol,
        max_iter: FORWARD_MAX_ITER,
    };
    let solve = |chi: &ContrastMap| solve_total_field_with(chi, problem.einc, problem.gd, opts.forward, krylov);

    let mut chi = init.clone();
    let mut etot = match solve(&chi) {
        Ok(e) => e,
        Err(error) => {
            trace.stop = Stop::Aborted { iteration: 0, error };
            return Ok(trace);
        }
    };
    let mut previous = data_residual(problem.es, &chi, &etot, problem.gs)?;
    for k in 1..=opts.iters {
        let started = Instant::now();
        let step = contrast_update(problem, &chi, &etot, opts, variant)
            .and_then(|(next, _)| solve(&next).map(|e| (next, e)))
            .and_then(|(next, e)| data_residual(problem.es, &next, &e, problem.gs).map(|r| (next, e, r)));
        let (next, e, residual) = match step {
            Ok(s) => s,
            Err(error) => {
                trace.stop = Stop::Aborted { iteration: k, error };
                break;
            }
        };
        if !residual.is_finite() {
            trace.stop = Stop::Aborted {
                iteration: k,
                error: Error::Undefined(format!("data residual is {residual}")),
            };
            break;
        }
        chi = next;
        etot = e;
        trace.entries.push(TraceEntry {
            iteration: k,
            contrast: chi.clone(),
            data_residual: residual,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(threshold) = opts.early_stop {
            let change = if previous == 0.0 { 0.0 } else { (previous - residual).abs() / previous };
            if change < threshold && k < opts.iters {
                trace.stop = Stop::EarlyStop { iteration: k };
                break;
            }
        }
        previous = residual;
    }
    trace.final_total_field = Some(etot);
    Ok(trace)
}

/// One BIM (`variant_is_vbim = false`) or VBIM contrast solve from a given
/// total field, without clamping. Exposed for paired comparisons.
pub fn raw_contrast_solve(
    problem: &InversionProblem,
    chi: &ContrastMap,
    etot: &FieldSet,
    opts: &InversionOptions,
    variant_is_vbim: bool,
) -> Result<Vec<Complex64>> {
    let variant = if variant_is_vbim { Variant::Vbim } else { Variant::Bim };
    contrast_update(problem, chi, etot, opts, variant).map(|(_, x)| x)
}

/// `||x||`, used by callers comparing iterates.
pub fn contrast_norm(chi: &ContrastMap) -> f64 {
    norm(chi.values())
}
