//! The unrolled variational Born iteration: per layer, a field correction
//! from the state-equation residual and a matched-filter contrast variation
//! from the data residual, each passed through a pluggable refiner.
//!
//! Refiners see complex arrays. A learned refiner that wants real images uses
//! [`encode_channels`]/[`decode_channels`]: two `M x M` channels, real part
//! first, cells row-major.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dot, norm, norm_sqr, CMatrix, FieldKind, FieldSet};
use crate::forward::apply_data_operator;
use crate::greens::{ApplyPath, GreensSurface, GreensVolume};
use crate::inversion::{bps, data_residual, tikhonov_solve, InversionProblem, IterateTrace, RegularizedLsProblem, Stop, TraceEntry, TIKHONOV_MAX_ITER, TIKHONOV_TOL};
use crate::io::{read_cell_vector, read_matrix, write_cell_vector, write_matrix};
use crate::linop::LinearOperator;
use crate::scene::ContrastMap;
use crate::stacked::StackedOperator;

fn check_cells(context: &'static str, gd_len: usize, chi: &ContrastMap, points: usize) -> Result<()> {
    if chi.len() != gd_len || points != gd_len {
        return Err(Error::shape(context, format!("{gd_len} cells"), format!("contrast {} / field {}", chi.len(), points)));
    }
    Ok(())
}

/// `E^i - (I - G_D diag(chi)) E^t`, column by column.
pub fn incident_residual(chi: &ContrastMap, etot: &FieldSet, einc: &FieldSet, gd: &GreensVolume) -> Result<CMatrix> {
    check_cells("incident_residual", gd.len(), chi, etot.n_points())?;
    if einc.values.shape() != etot.values.shape() {
        return Err(Error::shape("incident_residual", format!("{:?}", etot.values.shape()), format!("{:?}", einc.values.shape())));
    }
    let mut sources = etot.values.clone();
    for col in sources.columns_mut() {
        for (v, c) in col.iter_mut().zip(chi.values()) {
            *v *= c;
        }
    }
    let scattered = gd.apply_columns(&sources, ApplyPath::Fft)?;
    // E^i - E^t + G_D diag(chi) E^t
    einc.values.sub(&etot.values)?.add(&scattered)
}

/// `E^s - G_S diag(chi) E^t`.
pub fn scattered_residual(es: &FieldSet, chi: &ContrastMap, etot: &FieldSet, gs: &GreensSurface) -> Result<CMatrix> {
    check_cells("scattered_residual", gs.n_cells(), chi, etot.n_points())?;
    let predicted = apply_data_operator(chi.values(), &etot.values, gs)?;
    es.values.sub(&predicted)
}

pub fn stack_operator<'a>(etot: &'a FieldSet, gs: &'a GreensSurface) -> Result<StackedOperator<'a>> {
    etot.expect(FieldKind::Total, "stack_operator")?;
    StackedOperator::new(etot, gs)
}

/// `(gamma A^H y, gamma)` with `gamma = y^T conj(w) / ||w||^2`, `w = A A^H y`.
/// Returns zeros when `y` or `w` vanishes.
pub fn matched_filter_dchi(op: &dyn LinearOperator, y: &[Complex64]) -> Result<(Vec<Complex64>, Complex64)> {
    if y.len() != op.rows() {
        return Err(Error::shape("matched filter", op.rows(), y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Undefined("non-finite data residual".into()));
    }
    let zero = (vec![Complex64::new(0.0, 0.0); op.cols()], Complex64::new(0.0, 0.0));
    if y.iter().all(|v| v.norm() == 0.0) {
        return Ok(zero);
    }
    let back = op.adjoint(y)?;
    let w = op.apply(&back)?;
    let ww = norm_sqr(&w);
    if ww == 0.0 {
        return Ok(zero);
    }
    let gamma = dot(&w, y) / ww;
    Ok((back.into_iter().map(|b| gamma * b).collect(), gamma))
}

/// Regularized least-squares contrast variation.
pub fn ls_dchi(op: &dyn LinearOperator, y: &[Complex64], lambda: f64) -> Result<Vec<Complex64>> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Undefined("non-finite data residual".into()));
    }
    tikhonov_solve(&RegularizedLsProblem::new(op, y, lambda)?, TIKHONOV_TOL, TIKHONOV_MAX_ITER)
}

/// `G_S diag(chi) E^t`.
pub fn predict_scattered(chi: &ContrastMap, etot: &FieldSet, gs: &GreensSurface) -> Result<CMatrix> {
    check_cells("predict_scattered", gs.n_cells(), chi, etot.n_points())?;
    apply_data_operator(chi.values(), &etot.values, gs)
}

/// Contrast sources `diag(chi) E^t_p`, one column per incidence.
pub fn predict_current(chi: &ContrastMap, etot: &FieldSet) -> Result<CMatrix> {
    if chi.len() != etot.n_points() {
        return Err(Error::shape("predict_current", chi.len(), etot.n_points()));
    }
    let mut out = etot.values.clone();
    for col in out.columns_mut() {
        for (v, c) in col.iter_mut().zip(chi.values()) {
            *v *= c;
        }
    }
    Ok(out)
}

/// `2 x M x M` real image: real channel then imaginary channel.
pub fn encode_channels(values: &[Complex64]) -> Vec<f64> {
    values.iter().map(|z| z.re).chain(values.iter().map(|z| z.im)).collect()
}

pub fn decode_channels(channels: &[f64]) -> Result<Vec<Complex64>> {
    if channels.len() % 2 != 0 {
        return Err(Error::shape("channel decode", "an even length", channels.len()));
    }
    let (re, im) = channels.split_at(channels.len() / 2);
    Ok(re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect())
}

/// Everything one layer produces.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub k: usize,
    pub chi: ContrastMap,
    pub etot: FieldSet,
    pub einc_residual: CMatrix,
    pub es_residual: CMatrix,
    pub approx_dchi: Vec<Complex64>,
    pub gamma: Complex64,
}

impl LayerState {
    /// Layer 0: the starting contrast with `E^t = E^i`.
    pub fn initial(chi: ContrastMap, einc: &FieldSet) -> Self {
        let (rows, cols) = einc.values.shape();
        LayerState {
            k: 0,
            einc_residual: CMatrix::zeros(rows, cols),
            es_residual: CMatrix::zeros(0, cols),
            approx_dchi: vec![Complex64::new(0.0, 0.0); chi.len()],
            gamma: Complex64::new(0.0, 0.0),
            etot: FieldSet::new(FieldKind::Total, einc.values.clone()),
            chi,
        }
    }
}

/// The two learnable mappings of a layer.
pub trait Refiner {
    /// `delta E^i_(k), E^t_(k-1) -> delta E^t_(k)`.
    fn refine_field(&self, layer: usize, einc_residual: &CMatrix, etot_prev: &FieldSet) -> Result<CMatrix>;

    /// `delta chi~_(k), chi_(k-1) -> delta chi_(k)`.
    fn refine_contrast(&self, layer: usize, approx_dchi: &[Complex64], chi_prev: &ContrastMap) -> Result<Vec<Complex64>>;
}

/// `delta E^t = delta E^i` (one stationary step of the state equation) and
/// `delta chi = delta chi~`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine_field(&self, _layer: usize, einc_residual: &CMatrix, _etot_prev: &FieldSet) -> Result<CMatrix> {
        Ok(einc_residual.clone())
    }

    fn refine_contrast(&self, _layer: usize, approx_dchi: &[Complex64], _chi_prev: &ContrastMap) -> Result<Vec<Complex64>> {
        Ok(approx_dchi.to_vec())
    }
}

/// Captures every call of the wrapped refiner so it can be replayed by a
/// [`TabulatedRefiner`].
pub struct RecordingRefiner<R> {
    inner: R,
    fields: RefCell<Vec<(usize, CMatrix, CMatrix, CMatrix)>>,
    contrasts: RefCell<Vec<(usize, usize, Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)>>,
}

impl<R: Refiner> RecordingRefiner<R> {
    pub fn new(inner: R) -> Self {
        RecordingRefiner {
            inner,
            fields: RefCell::new(Vec::new()),
            contrasts: RefCell::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.fields.borrow().len() + self.contrasts.borrow().len()
    }

    /// Writes `refiner.json` plus one dump per array into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let fields = self.fields.borrow();
        let contrasts = self.contrasts.borrow();
        if fields.len() != contrasts.len() {
            return Err(Error::Format("recorded an unequal number of field and contrast calls".into()));
        }
        let mut layers = Vec::new();
        for ((layer, d_einc, etot_prev, d_etot), (clayer, grid, approx, chi_prev, d_chi)) in fields.iter().zip(contrasts.iter()) {
            if layer != clayer {
                return Err(Error::Format(format!("field call for layer {layer} paired with contrast call for layer {clayer}")));
            }
            let name = |what: &str| format!("layer{layer}_{what}.bin");
            write_matrix(&dir.join(name("d_einc")), d_einc)?;
            write_matrix(&dir.join(name("etot_prev")), etot_prev)?;
            write_matrix(&dir.join(name("d_etot")), d_etot)?;
            write_cell_vector(&dir.join(name("approx_dchi")), *grid, approx)?;
            write_cell_vector(&dir.join(name("chi_prev")), *grid, chi_prev)?;
            write_cell_vector(&dir.join(name("d_chi")), *grid, d_chi)?;
            layers.push(TabulatedLayer {
                layer: *layer,
                d_einc: name("d_einc"),
                etot_prev: name("etot_prev"),
                d_etot: name("d_etot"),
                approx_dchi: name("approx_dchi"),
                chi_prev: name("chi_prev"),
                d_chi: name("d_chi"),
            });
        }
        let manifest = TabulatedManifest { layers };
        std::fs::write(dir.join(TABULATED_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

impl<R: Refiner> Refiner for RecordingRefiner<R> {
    fn refine_field(&self, layer: usize, einc_residual: &CMatrix, etot_prev: &FieldSet) -> Result<CMatrix> {
        let out = self.inner.refine_field(layer, einc_residual, etot_prev)?;
        self.fields
            .borrow_mut()
            .push((layer, einc_residual.clone(), etot_prev.values.clone(), out.clone()));
        Ok(out)
    }

    fn refine_contrast(&self, layer: usize, approx_dchi: &[Complex64], chi_prev: &ContrastMap) -> Result<Vec<Complex64>> {
        let out = self.inner.refine_contrast(layer, approx_dchi, chi_prev)?;
        self.contrasts.borrow_mut().push((
            layer,
            chi_prev.grid(),
            approx_dchi.to_vec(),
            chi_prev.values().to_vec(),
            out.clone(),
        ));
        Ok(out)
    }
}

pub const TABULATED_MANIFEST: &str = "refiner.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TabulatedLayer {
    layer: usize,
    d_einc: String,
    etot_prev: String,
    d_etot: String,
    approx_dchi: String,
    chi_prev: String,
    d_chi: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TabulatedManifest {
    layers: Vec<TabulatedLayer>,
}

struct TabulatedEntry {
    d_einc: CMatrix,
    etot_prev: CMatrix,
    d_etot: CMatrix,
    approx_dchi: Vec<Complex64>,
    chi_prev: Vec<Complex64>,
    d_chi: Vec<Complex64>,
}

/// Replays dumped input/output pairs, one per layer. Each call checks that
/// its inputs match the recorded ones to `tolerance` (relative, per array).
pub struct TabulatedRefiner {
    entries: Vec<(usize, TabulatedEntry)>,
    tolerance: f64,
    source: PathBuf,
}

fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    diff <= tol * norm(b).max(f64::MIN_POSITIVE)
}

impl TabulatedRefiner {
    pub fn load(dir: &Path, tolerance: f64) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(TABULATED_MANIFEST))?;
        let manifest: TabulatedManifest = serde_json::from_str(&text)?;
        let mut entries = Vec::new();
        for l in manifest.layers {
            entries.push((
                l.layer,
                TabulatedEntry {
                    d_einc: read_matrix(&dir.join(&l.d_einc))?,
                    etot_prev: read_matrix(&dir.join(&l.etot_prev))?,
                    d_etot: read_matrix(&dir.join(&l.d_etot))?,
                    approx_dchi: read_cell_vector(&dir.join(&l.approx_dchi))?.1,
                    chi_prev: read_cell_vector(&dir.join(&l.chi_prev))?.1,
                    d_chi: read_cell_vector(&dir.join(&l.d_chi))?.1,
                },
            ));
        }
        Ok(TabulatedRefiner {
            entries,
            tolerance,
            source: dir.to_path_buf(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.entries.len()
    }

    fn entry(&self, layer: usize) -> Result<&TabulatedEntry> {
        self.entries
            .iter()
            .find(|(l, _)| *l == layer)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Format(format!("{} has no entry for layer {layer}", self.source.display())))
    }

    fn mismatch(&self, layer: usize, what: &str) -> Error {
        Error::Format(format!(
            "tabulated refiner {}: {what} at layer {layer} does not match the recorded input",
            self.source.display()
        ))
    }
}

impl Refiner for TabulatedRefiner {
    fn refine_field(&self, layer: usize, einc_residual: &CMatrix, etot_prev: &FieldSet) -> Result<CMatrix> {
        let e = self.entry(layer)?;
        if e.d_einc.shape() != einc_residual.shape() || !close(einc_residual.as_vec(), e.d_einc.as_vec(), self.tolerance) {
            return Err(self.mismatch(layer, "incident-field residual"));
        }
        if e.etot_prev.shape() != etot_prev.values.shape() || !close(etot_prev.values.as_vec(), e.etot_prev.as_vec(), self.tolerance) {
            return Err(self.mismatch(layer, "previous total field"));
        }
        Ok(e.d_etot.clone())
    }

    fn refine_contrast(&self, layer: usize, approx_dchi: &[Complex64], chi_prev: &ContrastMap) -> Result<Vec<Complex64>> {
        let e = self.entry(layer)?;
        if !close(approx_dchi, &e.approx_dchi, self.tolerance) {
            return Err(self.mismatch(layer, "approximate contrast variation"));
        }
        if !close(chi_prev.values(), &e.chi_prev, self.tolerance) {
            return Err(self.mismatch(layer, "previous contrast"));
        }
        Ok(e.d_chi.clone())
    }
}

/// Fixed inputs shared by every layer.
pub type LayerInputs<'a> = InversionProblem<'a>;

/// One layer: field update from the state-equation residual, then a
/// matched-filter contrast update from the data residual.
pub fn layer_step(state: &LayerState, inputs: &LayerInputs, refiner: &dyn Refiner, clamp: bool) -> Result<LayerState> {
    let k = state.k + 1;
    let n = inputs.gd.len();
    let d_einc = incident_residual(&state.chi, &state.etot, inputs.einc, inputs.gd)?;
    let d_etot = refiner.refine_field(k, &d_einc, &state.etot)?;
    if d_etot.shape() != state.etot.values.shape() {
        return Err(Error::Refiner {
            mapping: "field_refine",
            expected: state.etot.values.rows() * state.etot.values.cols(),
            got: d_etot.rows() * d_etot.cols(),
        });
    }
    let etot = FieldSet::new(FieldKind::Total, state.etot.values.add(&d_etot)?);
    let d_es = scattered_residual(inputs.es, &state.chi, &etot, inputs.gs)?;
    let op = stack_operator(&etot, inputs.gs)?;
    let (approx_dchi, gamma) = matched_filter_dchi(&op, d_es.as_vec())?;
    let d_chi = refiner.refine_contrast(k, &approx_dchi, &state.chi)?;
    if d_chi.len() != n {
        return Err(Error::Refiner {
            mapping: "contrast_refine",
            expected: n,
            got: d_chi.len(),
        });
    }
    let next: Vec<Complex64> = state.chi.values().iter().zip(&d_chi).map(|(a, b)| a + b).collect();
    let chi = if clamp {
        ContrastMap::clamped(state.chi.grid(), next)?
    } else {
        ContrastMap::unconstrained(state.chi.grid(), next)?
    };
    if !etot.values.is_finite() || chi.values().iter().any(|z| !z.is_finite()) {
        return Err(Error::Undefined(format!("layer {k} produced non-finite values")));
    }
    Ok(LayerState {
        k,
        chi,
        etot,
        einc_residual: d_einc,
        es_residual: d_es,
        approx_dchi,
        gamma,
    })
}

pub const DEFAULT_LAYERS: usize = 7;

pub struct PipelineConfig<'a> {
    pub n_layers: usize,
    pub refiner: &'a dyn Refiner,
    pub clamp: bool,
}

impl<'a> PipelineConfig<'a> {
    pub fn new(refiner: &'a dyn Refiner) -> Self {
        PipelineConfig {
            n_layers: DEFAULT_LAYERS,
            refiner,
            clamp: true,
        }
    }
}

/// Runs `K` layers from `chi0` (or the back-propagation estimate) with
/// `E^t_(0) = E^i`. Returns every layer state and the trace; on failure the
/// trace keeps the layers completed so far.
pub fn run_layers(config: &PipelineConfig, inputs: &LayerInputs, chi0: Option<&ContrastMap>) -> Result<(IterateTrace, Vec<LayerState>)> {
    if config.n_layers == 0 {
        return Err(Error::Config("the pipeline needs at least one layer".into()));
    }
    let mut hyper = serde_json::Map::new();
    hyper.insert("layers".into(), config.n_layers.into());
    hyper.insert("clamp".into(), config.clamp.into());
    hyper.insert("init".into(), if chi0.is_some() { "given" } else { "bps" }.into());
    let mut trace = IterateTrace::new("unrolled", hyper);
    let chi0 = match chi0 {
        Some(c) => {
            if c.len() != inputs.gd.len() {
                return Err(Error::shape("initial contrast", inputs.gd.len(), c.len()));
            }
            c.clone()
        }
        None => bps(inputs)?.0,
    };
    let mut states = vec![LayerState::initial(chi0, inputs.einc)];
    for _ in 0..config.n_layers {
        let started = Instant::now();
        let prev = states.last().expect("at least the initial state");
        let k = prev.k + 1;
        let step = layer_step(prev, inputs, config.refiner, config.clamp)
            .and_then(|s| data_residual(inputs.es, &s.chi, &s.etot, inputs.gs).map(|r| (s, r)));
        match step {
            Ok((state, residual)) => {
                trace.entries.push(TraceEntry {
                    iteration: k,
                    contrast: state.chi.clone(),
                    data_residual: residual,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                });
                states.push(state);
            }
            Err(error) => {
                trace.stop = Stop::Aborted { iteration: k, error };
                break;
            }
        }
    }
    trace.final_total_field = states.last().map(|s| s.etot.clone());
    Ok((trace, states))
}

pub fn run_pipeline(config: &PipelineConfig, inputs: &LayerInputs, chi0: Option<&ContrastMap>) -> Result<IterateTrace> {
    run_layers(config, inputs, chi0).map(|(t, _)| t)
}
