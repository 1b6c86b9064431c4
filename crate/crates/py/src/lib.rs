//! Python bindings. Complex arrays cross the boundary as lists of Python
//! `complex`; fields are lists of columns, one per incidence.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use tmis::config::SceneConfig;
use tmis::field::FieldSet;
use tmis::forward::{add_noise, NoiseSpec, SolveMethod};
use tmis::greens::{GreensSurface, GreensVolume};
use tmis::harness::{self, EvalArgs, InvertArgs, MethodSpec, RefinerSpec, SceneSource, SimulateArgs};
use tmis::inversion::{self, Init, InversionOptions, InversionProblem, IterateTrace};
use tmis::metrics::{self, LossParams, WeightConvention};
use tmis::scene::{rasterize, ContrastMap};
use tmis::special::{self, Order};
use tmis::unrolled::{run_pipeline, IdentityRefiner, PipelineConfig};

fn err(e: tmis::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn columns(f: &FieldSet) -> Vec<Vec<Complex64>> {
    (0..f.values.cols()).map(|p| f.column(p).to_vec()).collect()
}

#[pyclass(name = "SceneConfig", from_py_object)]
#[derive(Clone)]
struct PySceneConfig {
    inner: SceneConfig,
}

#[pymethods]
impl PySceneConfig {
    #[new]
    #[pyo3(signature = (doi_side_m=0.2, antenna_radius_m=1.67, freq_hz=3e9, n_tx=16, n_rx=32, forward_grid=100, inversion_grid=64, lossy=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        doi_side_m: f64,
        antenna_radius_m: f64,
        freq_hz: f64,
        n_tx: usize,
        n_rx: usize,
        forward_grid: usize,
        inversion_grid: usize,
        lossy: bool,
    ) -> PyResult<Self> {
        let inner = SceneConfig {
            doi_side_m,
            antenna_radius_m,
            freq_hz,
            n_tx,
            n_rx,
            forward_grid,
            inversion_grid,
            lossy,
        };
        inner.validate().map_err(err)?;
        Ok(PySceneConfig { inner })
    }

    #[getter]
    fn wavenumber(&self) -> f64 {
        self.inner.wavenumber()
    }

    #[getter]
    fn forward_grid(&self) -> usize {
        self.inner.forward_grid
    }

    #[getter]
    fn inversion_grid(&self) -> usize {
        self.inner.inversion_grid
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "ContrastMap", from_py_object)]
#[derive(Clone)]
struct PyContrastMap {
    inner: ContrastMap,
}

#[pymethods]
impl PyContrastMap {
    #[new]
    fn new(grid: usize, values: Vec<Complex64>) -> PyResult<Self> {
        Ok(PyContrastMap {
            inner: ContrastMap::new(grid, values).map_err(err)?,
        })
    }

    #[getter]
    fn grid(&self) -> usize {
        self.inner.grid()
    }

    /// Row-major cell values.
    fn values(&self) -> Vec<Complex64> {
        self.inner.values().to_vec()
    }

    fn nmse(&self, truth: &PyContrastMap) -> PyResult<f64> {
        metrics::nmse(&self.inner, &truth.inner).map_err(err)
    }

    fn ssim(&self, truth: &PyContrastMap) -> PyResult<f64> {
        metrics::ssim(&self.inner, &truth.inner, metrics::SSIM_K1, metrics::SSIM_K2).map_err(err)
    }

    fn tv(&self) -> f64 {
        metrics::tv_seminorm(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Trace")]
struct PyTrace {
    inner: IterateTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.inner.residuals()
    }

    fn contrast(&self, iteration: usize) -> PyResult<PyContrastMap> {
        self.inner
            .entries
            .iter()
            .find(|e| e.iteration == iteration)
            .map(|e| PyContrastMap { inner: e.contrast.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("no iteration {iteration}")))
    }

    fn final_contrast(&self) -> Option<PyContrastMap> {
        self.inner.last().map(|e| PyContrastMap { inner: e.contrast.clone() })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Measured data plus the inversion-grid operators.
#[pyclass(name = "Simulation")]
struct PySimulation {
    config: SceneConfig,
    truth: ContrastMap,
    es_clean: FieldSet,
    es: FieldSet,
    einc: FieldSet,
    gd: GreensVolume,
    gs: GreensSurface,
}

impl PySimulation {
    fn problem(&self) -> PyResult<InversionProblem<'_>> {
        InversionProblem::new(&self.es, &self.einc, &self.gd, &self.gs).map_err(err)
    }

    fn iterate(&self, vbim: bool, iters: usize, lam: f64, early_stop: Option<f64>, init_zero: bool) -> PyResult<PyTrace> {
        let problem = self.problem()?;
        let options = InversionOptions {
            lambda: lam,
            iters,
            early_stop,
            ..InversionOptions::default()
        };
        let init = if init_zero { Init::Zero } else { Init::Bps };
        let chi0 = inversion::initial_contrast(&problem, &init).map_err(err)?;
        let trace = if vbim {
            inversion::vbim(&problem, &chi0, &options)
        } else {
            inversion::bim(&problem, &chi0, &options)
        }
        .map_err(err)?;
        Ok(PyTrace { inner: trace })
    }
}

#[pymethods]
impl PySimulation {
    /// `scene` is `austria`, `cylinders:SEED[:lossy]` or a scene JSON path.
    #[new]
    #[pyo3(signature = (config, scene, contrast=Complex64::new(1.0, 0.0), noise=0.0, seed=0))]
    fn new(config: &PySceneConfig, scene: &str, contrast: Complex64, noise: f64, seed: u64) -> PyResult<Self> {
        let config = config.inner.clone();
        let shapes = SceneSource::parse(scene, contrast)
            .and_then(|s| s.shapes(&config))
            .map_err(err)?;
        let forward = tmis::forward::ForwardModel::new(&config, config.forward_grid).map_err(err)?;
        let chi = rasterize(&shapes, &config, config.forward_grid).map_err(err)?;
        let (_, es_clean) = forward.simulate(&chi, SolveMethod::Iterative).map_err(err)?;
        let es = add_noise(&es_clean, NoiseSpec { level: noise, seed }).map_err(err)?;
        let cells = config.inversion_grid;
        Ok(PySimulation {
            truth: rasterize(&shapes, &config, cells).map_err(err)?,
            einc: tmis::forward::incident_fields(&config, cells).map_err(err)?,
            gd: GreensVolume::assemble(&config, cells).map_err(err)?,
            gs: GreensSurface::assemble(&config, cells).map_err(err)?,
            config,
            es_clean,
            es,
        })
    }

    #[getter]
    fn config(&self) -> PySceneConfig {
        PySceneConfig { inner: self.config.clone() }
    }

    /// Ground truth on the inversion grid.
    #[getter]
    fn truth(&self) -> PyContrastMap {
        PyContrastMap { inner: self.truth.clone() }
    }

    #[pyo3(signature = (noisy=true))]
    fn scattered(&self, noisy: bool) -> Vec<Vec<Complex64>> {
        columns(if noisy { &self.es } else { &self.es_clean })
    }

    fn incident(&self) -> Vec<Vec<Complex64>> {
        columns(&self.einc)
    }

    fn bps(&self) -> PyResult<PyContrastMap> {
        let (chi, _) = inversion::bps(&self.problem()?).map_err(err)?;
        Ok(PyContrastMap { inner: chi })
    }

    #[pyo3(signature = (iters=20, lam=5e-4, early_stop=Some(1e-4), init_zero=false))]
    fn bim(&self, iters: usize, lam: f64, early_stop: Option<f64>, init_zero: bool) -> PyResult<PyTrace> {
        self.iterate(false, iters, lam, early_stop, init_zero)
    }

    #[pyo3(signature = (iters=20, lam=5e-4, early_stop=Some(1e-4), init_zero=false))]
    fn vbim(&self, iters: usize, lam: f64, early_stop: Option<f64>, init_zero: bool) -> PyResult<PyTrace> {
        self.iterate(true, iters, lam, early_stop, init_zero)
    }

    /// Unrolled layers with identity refiners.
    #[pyo3(signature = (layers=7, clamp=true))]
    fn unrolled(&self, layers: usize, clamp: bool) -> PyResult<PyTrace> {
        let problem = self.problem()?;
        let refiner = IdentityRefiner;
        let config = PipelineConfig {
            n_layers: layers,
            refiner: &refiner,
            clamp,
        };
        let trace = run_pipeline(&config, &problem, None).map_err(err)?;
        Ok(PyTrace { inner: trace })
    }
}

#[pyfunction]
fn bessel_j(order: u32, x: f64) -> PyResult<f64> {
    special::bessel_j(Order::try_from(order).map_err(err)?, x).map_err(err)
}

#[pyfunction]
fn bessel_y(order: u32, x: f64) -> PyResult<f64> {
    special::bessel_y(Order::try_from(order).map_err(err)?, x).map_err(err)
}

#[pyfunction]
fn hankel1(order: u32, x: f64) -> PyResult<Complex64> {
    special::hankel1(Order::try_from(order).map_err(err)?, x).map_err(err)
}

fn loss_params(c: f64, layers: usize, literal: bool) -> LossParams {
    LossParams {
        c,
        layers,
        convention: if literal { WeightConvention::Literal } else { WeightConvention::LastLayerUnit },
        ..LossParams::default()
    }
}

#[pyfunction]
#[pyo3(signature = (c=0.8, layers=7, literal=false))]
fn layer_weights(c: f64, layers: usize, literal: bool) -> PyResult<Vec<f64>> {
    metrics::layer_weights(&loss_params(c, layers, literal)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (per_layer, c=0.8, literal=false))]
fn total_loss(per_layer: Vec<f64>, c: f64, literal: bool) -> PyResult<f64> {
    metrics::total_loss(&per_layer, &loss_params(c, per_layer.len(), literal)).map_err(err)
}

#[pyfunction]
fn snr_weighted_loss(base: f64, noise_level: f64) -> PyResult<f64> {
    metrics::snr_weighted_loss(base, noise_level, &LossParams::default()).map_err(err)
}

/// Simulates into `out`; returns the run id.
#[pyfunction]
#[pyo3(signature = (out, config, scene, contrast=Complex64::new(1.0, 0.0), noise=0.0, seed=0))]
fn simulate_run(out: PathBuf, config: &PySceneConfig, scene: &str, contrast: Complex64, noise: f64, seed: u64) -> PyResult<String> {
    let mut args = SimulateArgs::new(
        SceneSource::parse(scene, contrast).map_err(err)?,
        config.inner.clone(),
        NoiseSpec { level: noise, seed },
    );
    args.out = Some(out);
    Ok(harness::cmd_simulate(&args).map_err(err)?.1.run_id)
}

/// Inverts a simulation directory with `bps`, `bim`, `vbim` or `unrolled`;
/// returns the output directory.
#[pyfunction]
#[pyo3(signature = (run, method, iters=20, lam=5e-4, layers=7, out=None))]
fn invert_run(run: PathBuf, method: &str, iters: usize, lam: f64, layers: usize, out: Option<PathBuf>) -> PyResult<PathBuf> {
    let options = InversionOptions {
        lambda: lam,
        iters,
        ..InversionOptions::default()
    };
    let method = match method {
        "bps" => MethodSpec::Bps,
        "bim" => MethodSpec::Bim { options, init: Init::Bps },
        "vbim" => MethodSpec::Vbim { options, init: Init::Bps },
        "unrolled" => MethodSpec::Unrolled {
            layers,
            refiner: RefinerSpec::Identity,
            clamp: true,
        },
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    Ok(harness::cmd_invert(&InvertArgs { run, method, out }).map_err(err)?.0)
}

/// Scores a prediction; returns the CSV row as a dict.
#[pyfunction]
#[pyo3(signature = (run, pred, csv=None))]
fn eval_run(py: Python<'_>, run: PathBuf, pred: PathBuf, csv: Option<PathBuf>) -> PyResult<Py<pyo3::types::PyDict>> {
    let row = harness::cmd_eval(&EvalArgs { run, pred, csv }).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("run_id", row.run_id)?;
    d.set_item("method", row.method)?;
    d.set_item("noise_level", row.noise_level)?;
    d.set_item("nmse", row.nmse)?;
    d.set_item("ssim", row.ssim)?;
    d.set_item("iterations", row.iterations)?;
    d.set_item("wall_ms", row.wall_ms)?;
    d.set_item("es_residual", row.es_residual)?;
    Ok(d.unbind())
}

#[pymodule]
fn tmis_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySceneConfig>()?;
    m.add_class::<PyContrastMap>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(bessel_j, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_y, m)?)?;
    m.add_function(wrap_pyfunction!(hankel1, m)?)?;
    m.add_function(wrap_pyfunction!(layer_weights, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(snr_weighted_loss, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_run, m)?)?;
    m.add_function(wrap_pyfunction!(invert_run, m)?)?;
    m.add_function(wrap_pyfunction!(eval_run, m)?)?;
    Ok(())
}
