//! Experiment orchestration: simulate, invert, evaluate, sweep and rerun.
//!
//! A simulation directory contains
//!
//! ```text
//! manifest.json        RunManifest
//! scene.json           the scene as simulated (+ any raster PGMs)
//! einc.bin             incident field on the inversion grid
//! es_clean.bin         noiseless scattered field
//! es_noisy.bin         scattered field with noise (equal to es_clean at level 0)
//! truth_forward.bin    contrast on the forward grid
//! truth_inverse.bin    contrast on the inversion grid
//! truth.pgm            preview of truth_inverse (+ truth_im.pgm when lossy)
//! ```
//!
//! and an inversion directory
//!
//! ```text
//! manifest.json
//! contrast.bin         final contrast
//! etot.bin             total field paired with the final contrast
//! trace.csv            iteration,data_residual,wall_ms
//! trace/iter_NNN.bin   contrast after each iteration or layer
//! contrast.pgm         preview (+ contrast_im.pgm when lossy)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::field::{FieldKind, FieldSet};
use crate::forward::{add_noise, incident_fields, ForwardModel, NoiseSpec, SolveMethod};
use crate::greens::{GreensSurface, GreensVolume};
use crate::inversion::{bim, bps, data_residual, initial_contrast, vbim, Init, InversionOptions, InversionProblem, IterateTrace, Stop, TraceEntry};
use crate::io;
use crate::metrics::{nmse, ssim, SSIM_K1, SSIM_K2};
use crate::scene::{austria_profile, load_scene, rasterize, sample_cylinder_scene, save_scene, with_contrast, ContrastMap, ShapeSpec};
use crate::unrolled::{predict_scattered, run_pipeline, IdentityRefiner, PipelineConfig, Refiner, TabulatedRefiner};

/// Default output root when no `--out` is given.
pub const OUT_ROOT_ENV: &str = "TMIS_OUT_ROOT";
pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Where a scene comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    File { path: PathBuf },
    Austria { contrast: [f64; 2] },
    Cylinders { seed: u64, lossy: bool },
}

impl SceneSource {
    /// `austria`, `cylinders:SEED`, `cylinders:SEED:lossy`, or a JSON file path.
    pub fn parse(text: &str, contrast: Complex64) -> Result<Self> {
        if text == "austria" {
            return Ok(SceneSource::Austria {
                contrast: [contrast.re, contrast.im],
            });
        }
        if let Some(rest) = text.strip_prefix("cylinders:") {
            let mut parts = rest.split(':');
            let seed = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad cylinder seed in {text:?}")))?;
            let lossy = match parts.next() {
                None => false,
                Some("lossy") => true,
                Some(other) => return Err(Error::Config(format!("unknown cylinder option {other:?}"))),
            };
            return Ok(SceneSource::Cylinders { seed, lossy });
        }
        Ok(SceneSource::File { path: PathBuf::from(text) })
    }

    pub fn shapes(&self, config: &SceneConfig) -> Result<Vec<ShapeSpec>> {
        match self {
            SceneSource::File { path } => load_scene(path),
            SceneSource::Austria { contrast } => austria_profile(Complex64::new(contrast[0], contrast[1]), config),
            SceneSource::Cylinders { seed, lossy } => Ok(sample_cylinder_scene(*seed, *lossy, config)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefinerSpec {
    Identity,
    Tabulated { path: PathBuf, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    Bps,
    Bim { options: InversionOptions, init: Init },
    Vbim { options: InversionOptions, init: Init },
    Unrolled { layers: usize, refiner: RefinerSpec, clamp: bool },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Bps => "bps",
            MethodSpec::Bim { .. } => "bim",
            MethodSpec::Vbim { .. } => "vbim",
            MethodSpec::Unrolled { .. } => "unrolled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Invert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: Command,
    pub run_id: String,
    /// Scene file, relative to the simulation directory.
    pub scene: PathBuf,
    pub config: SceneConfig,
    pub noise: NoiseSpec,
    pub forward_solver: SolveMethod,
    pub method: Option<MethodSpec>,
    /// Simulation directory an inversion read from.
    pub source_run: Option<PathBuf>,
    pub source_run_id: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Upper end of the PGM grey scale, per channel.
    pub display_max: [f64; 2],
    /// File names relative to the run directory, by role.
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub iterations: Option<usize>,
    pub stop: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", manifest.format_version)));
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Peak real and imaginary parts, 1 where a channel is empty.
fn display_range(map: &ContrastMap) -> [f64; 2] {
    let peak = |f: fn(&Complex64) -> f64| {
        let m = map.values().iter().map(f).fold(0.0, f64::max);
        if m > 0.0 { m } else { 1.0 }
    };
    [peak(|z| z.re), peak(|z| z.im)]
}

fn write_previews(dir: &Path, stem: &str, map: &ContrastMap, range: [f64; 2], outputs: &mut BTreeMap<String, String>) -> Result<()> {
    let name = format!("{stem}.pgm");
    io::write_contrast_pgm(&dir.join(&name), map, range[0], false)?;
    outputs.insert(format!("{stem}_preview"), name);
    if map.is_lossy() {
        let name = format!("{stem}_im.pgm");
        io::write_contrast_pgm(&dir.join(&name), map, range[1], true)?;
        outputs.insert(format!("{stem}_preview_im"), name);
    }
    Ok(())
}

/// Stages output in `out` (or a fresh directory under the default root, renamed
/// after the run id once known).
struct Staging {
    dir: PathBuf,
    rename_to_id: Option<(PathBuf, &'static str)>,
}

impl Staging {
    fn new(out: Option<&Path>, prefix: &'static str) -> Result<Self> {
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Ok(Staging {
                    dir: dir.to_path_buf(),
                    rename_to_id: None,
                })
            }
            None => {
                let root = default_out_root();
                let nanos = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos())
                    .unwrap_or(0);
                let dir = root.join(format!(".staging-{}-{nanos}", std::process::id()));
                std::fs::create_dir_all(&dir)?;
                Ok(Staging {
                    dir,
                    rename_to_id: Some((root, prefix)),
                })
            }
        }
    }

    fn finish(self, run_id: &str) -> Result<PathBuf> {
        match self.rename_to_id {
            None => Ok(self.dir),
            Some((root, prefix)) => {
                let target = root.join(format!("{prefix}-{run_id}"));
                if target.exists() {
                    std::fs::remove_dir_all(&target)?;
                }
                std::fs::rename(&self.dir, &target)?;
                Ok(target)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub scene: SceneSource,
    pub config: SceneConfig,
    pub noise: NoiseSpec,
    pub forward_solver: SolveMethod,
    pub out: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn new(scene: SceneSource, config: SceneConfig, noise: NoiseSpec) -> Self {
        SimulateArgs {
            scene,
            config,
            noise,
            forward_solver: SolveMethod::Iterative,
            out: None,
        }
    }
}

/// Rasterizes and simulates a scene; writes dumps, previews and a manifest.
/// Returns the run directory and its manifest.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<(PathBuf, RunManifest)> {
    let started = Instant::now();
    let config = &args.config;
    config.validate()?;
    if config.commits_inverse_crime() {
        log::warn!(
            "forward grid equals inversion grid ({0}x{0}): simulating and inverting on the same discretization commits the inverse crime",
            config.forward_grid
        );
    }
    let shapes = args.scene.shapes(config)?;
    for s in &shapes {
        s.validate(config.doi_side_m)?;
    }
    let staging = Staging::new(args.out.as_deref(), "sim")?;
    let dir = staging.dir.clone();
    // simulate what was written, so a rerun from scene.json is identical
    let scene_path = dir.join("scene.json");
    save_scene(&shapes, &scene_path)?;
    let shapes = load_scene(&scene_path)?;

    let config_json = serde_json::to_string(config)?;
    let noise_json = serde_json::to_string(&args.noise)?;
    let solver_json = serde_json::to_string(&args.forward_solver)?;
    let run_id = digest(&["simulate", &format!("{shapes:?}"), &config_json, &noise_json, &solver_json]);

    let mut outputs = BTreeMap::new();
    let mut timings = BTreeMap::new();
    let mut put = |role: &str, name: &str| {
        outputs.insert(role.to_string(), name.to_string());
    };
    put("scene", "scene.json");

    let t = Instant::now();
    let forward = ForwardModel::new(config, config.forward_grid)?;
    let truth_fwd = rasterize(&shapes, config, config.forward_grid)?;
    let (_, es_clean) = forward.simulate(&truth_fwd, args.forward_solver)?;
    timings.insert("forward_solve".to_string(), ms(t));
    let es_noisy = add_noise(&es_clean, args.noise)?;
    let einc = incident_fields(config, config.inversion_grid)?;
    let truth_inv = rasterize(&shapes, config, config.inversion_grid)?;

    io::write_field(&dir.join("es_clean.bin"), &es_clean)?;
    io::write_field(&dir.join("es_noisy.bin"), &es_noisy)?;
    io::write_field(&dir.join("einc.bin"), &einc)?;
    io::write_contrast(&dir.join("truth_forward.bin"), &truth_fwd)?;
    io::write_contrast(&dir.join("truth_inverse.bin"), &truth_inv)?;
    for (role, name) in [
        ("es_clean", "es_clean.bin"),
        ("es_noisy", "es_noisy.bin"),
        ("einc", "einc.bin"),
        ("truth_forward", "truth_forward.bin"),
        ("truth_inverse", "truth_inverse.bin"),
    ] {
        put(role, name);
    }
    let range = display_range(&truth_inv);
    write_previews(&dir, "truth", &truth_inv, range, &mut outputs)?;
    timings.insert("total".to_string(), ms(started));

    let mut seeds = BTreeMap::new();
    seeds.insert("noise".to_string(), args.noise.seed);
    if let SceneSource::Cylinders { seed, .. } = args.scene {
        seeds.insert("scene".to_string(), seed);
    }
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: Command::Simulate,
        run_id: run_id.clone(),
        scene: PathBuf::from("scene.json"),
        config: config.clone(),
        noise: args.noise,
        forward_solver: args.forward_solver,
        method: None,
        source_run: None,
        source_run_id: None,
        seeds,
        display_max: range,
        outputs,
        timings_ms: timings,
        iterations: None,
        stop: None,
    };
    manifest.save(&dir)?;
    let dir = staging.finish(&run_id)?;
    Ok((dir, manifest))
}

/// Measured data and inversion-grid operators of a simulation directory.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub es: FieldSet,
    pub einc: FieldSet,
    pub gd: GreensVolume,
    pub gs: GreensSurface,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(&dir.join(MANIFEST))?;
        if manifest.command != Command::Simulate {
            return Err(Error::Config(format!("{} is not a simulation directory", dir.display())));
        }
        let file = |role: &str| -> Result<PathBuf> {
            manifest
                .outputs
                .get(role)
                .map(|n| dir.join(n))
                .ok_or_else(|| Error::Format(format!("manifest lists no {role} output")))
        };
        let es = io::read_field(&file("es_noisy")?, FieldKind::Scattered)?;
        let einc = io::read_field(&file("einc")?, FieldKind::Incident)?;
        let cells = manifest.config.inversion_grid;
        Ok(LoadedRun {
            gd: GreensVolume::assemble(&manifest.config, cells)?,
            gs: GreensSurface::assemble(&manifest.config, cells)?,
            dir: dir.to_path_buf(),
            manifest,
            es,
            einc,
        })
    }

    pub fn problem(&self) -> Result<InversionProblem<'_>> {
        InversionProblem::new(&self.es, &self.einc, &self.gd, &self.gs)
    }

    pub fn truth(&self) -> Result<ContrastMap> {
        io::read_contrast(&self.dir.join(self.manifest.outputs.get("truth_inverse").map(String::as_str).unwrap_or("truth_inverse.bin")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertArgs {
    pub run: PathBuf,
    pub method: MethodSpec,
    /// Defaults to `<run>/<method>`.
    pub out: Option<PathBuf>,
}

/// Runs `method` on the loaded data; returns the trace (possibly aborted).
pub fn run_method(run: &LoadedRun, method: &MethodSpec) -> Result<IterateTrace> {
    let problem = run.problem()?;
    match method {
        MethodSpec::Bps => {
            let started = Instant::now();
            let (chi, etot) = bps(&problem)?;
            let residual = data_residual(problem.es, &chi, &etot, problem.gs)?;
            let mut trace = IterateTrace::new("bps", serde_json::Map::new());
            trace.entries.push(TraceEntry {
                iteration: 1,
                contrast: chi,
                data_residual: residual,
                wall_ms: ms(started),
            });
            trace.final_total_field = Some(etot);
            Ok(trace)
        }
        MethodSpec::Bim { options, init } | MethodSpec::Vbim { options, init } => {
            let chi0 = initial_contrast(&problem, init)?;
            if matches!(method, MethodSpec::Bim { .. }) {
                bim(&problem, &chi0, options)
            } else {
                vbim(&problem, &chi0, options)
            }
        }
        MethodSpec::Unrolled { layers, refiner, clamp } => {
            let refiner: Box<dyn Refiner> = match refiner {
                RefinerSpec::Identity => Box::new(IdentityRefiner),
                RefinerSpec::Tabulated { path, tolerance } => Box::new(TabulatedRefiner::load(path, *tolerance)?),
            };
            let config = PipelineConfig {
                n_layers: *layers,
                refiner: refiner.as_ref(),
                clamp: *clamp,
            };
            run_pipeline(&config, &problem, None)
        }
    }
}

fn stop_label(stop: &Stop) -> String {
    match stop {
        Stop::Completed => "completed".into(),
        Stop::EarlyStop { iteration } => format!("early_stop at {iteration}"),
        Stop::Aborted { iteration, error } => format!("aborted at {iteration}: {error}"),
    }
}

/// Inverts a simulation; writes the final contrast, its total field, the
/// per-iteration trace and previews. On a failed iteration the trace so far is
/// still written before the error is returned.
pub fn cmd_invert(args: &InvertArgs) -> Result<(PathBuf, RunManifest)> {
    let started = Instant::now();
    let run = LoadedRun::open(&args.run)?;
    let dir = args.out.clone().unwrap_or_else(|| args.run.join(args.method.name()));
    std::fs::create_dir_all(dir.join("trace"))?;
    let method_json = serde_json::to_string(&args.method)?;
    let run_id = digest(&["invert", &run.manifest.run_id, &method_json]);

    let trace = run_method(&run, &args.method)?;
    let mut outputs = BTreeMap::new();
    let mut csv = String::from("iteration,data_residual,wall_ms\n");
    for e in &trace.entries {
        let name = format!("trace/iter_{:03}.bin", e.iteration);
        io::write_contrast(&dir.join(&name), &e.contrast)?;
        let _ = writeln!(csv, "{},{},{}", e.iteration, fmt_float(e.data_residual), fmt_float(e.wall_ms));
    }
    std::fs::write(dir.join("trace.csv"), csv)?;
    outputs.insert("trace".to_string(), "trace.csv".to_string());
    if let Some(last) = trace.last() {
        io::write_contrast(&dir.join("contrast.bin"), &last.contrast)?;
        outputs.insert("contrast".to_string(), "contrast.bin".to_string());
        write_previews(&dir, "contrast", &last.contrast, run.manifest.display_max, &mut outputs)?;
    }
    if let (Some(etot), false) = (&trace.final_total_field, trace.is_empty()) {
        io::write_field(&dir.join("etot.bin"), etot)?;
        outputs.insert("etot".to_string(), "etot.bin".to_string());
    }
    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), ms(started));
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: Command::Invert,
        run_id,
        scene: run.manifest.scene.clone(),
        config: run.manifest.config.clone(),
        noise: run.manifest.noise,
        forward_solver: run.manifest.forward_solver,
        method: Some(args.method.clone()),
        source_run: Some(std::fs::canonicalize(&args.run)?),
        source_run_id: Some(run.manifest.run_id.clone()),
        seeds: run.manifest.seeds.clone(),
        display_max: run.manifest.display_max,
        outputs,
        timings_ms: timings,
        iterations: Some(trace.len()),
        stop: Some(stop_label(&trace.stop)),
    };
    manifest.save(&dir)?;
    trace.into_result()?;
    Ok((dir, manifest))
}

/// 17 significant digits; empty for a missing value.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() { String::new() } else { format!("{x:.16e}") }
}

pub const EVAL_HEADER: &str = "run_id,method,noise_level,nmse,ssim,iterations,wall_ms,es_residual";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub run_id: String,
    pub method: String,
    pub noise_level: f64,
    pub nmse: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    /// `||E^s - G_S diag(chi) E^t|| / ||E^s||` with the prediction's own total
    /// field; NaN when the prediction carries none.
    pub es_residual: f64,
}

impl EvalRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.method,
            fmt_float(self.noise_level),
            fmt_float(self.nmse),
            fmt_float(self.ssim),
            self.iterations,
            fmt_float(self.wall_ms),
            fmt_float(self.es_residual)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    /// Simulation directory holding the truth.
    pub run: PathBuf,
    /// An inversion directory, or a bare contrast dump.
    pub pred: PathBuf,
    /// Appended to; the header is written when the file is new or empty.
    pub csv: Option<PathBuf>,
}

/// Scores a prediction against the simulation's inversion-grid truth.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalRow> {
    let sim = RunManifest::load(&args.run.join(MANIFEST))?;
    let truth = io::read_contrast(&args.run.join("truth_inverse.bin"))?;
    let (pred, row_base) = if args.pred.is_dir() {
        let m = RunManifest::load(&args.pred.join(MANIFEST))?;
        let pred = io::read_contrast(&args.pred.join("contrast.bin"))?;
        let method = m.method.as_ref().map(|x| x.name()).unwrap_or("unknown").to_string();
        let wall = m.timings_ms.get("total").copied().unwrap_or(f64::NAN);
        (pred, (m.run_id, method, m.iterations.unwrap_or(0), wall))
    } else {
        let pred = io::read_contrast(&args.pred)?;
        (pred, (sim.run_id.clone(), "external".to_string(), 0, f64::NAN))
    };
    if pred.grid() != truth.grid() {
        return Err(Error::shape("eval", format!("{0}x{0} grid", truth.grid()), format!("{0}x{0}", pred.grid())));
    }
    let etot_path = args.pred.join("etot.bin");
    let es_residual = if args.pred.is_dir() && etot_path.exists() {
        let etot = io::read_field(&etot_path, FieldKind::Total)?;
        let es = io::read_field(&args.run.join("es_noisy.bin"), FieldKind::Scattered)?;
        let gs = GreensSurface::assemble(&sim.config, truth.grid())?;
        let predicted = predict_scattered(&pred, &etot, &gs)?;
        let scale = es.frobenius_norm();
        es.values.sub(&predicted)?.frobenius_norm() / scale
    } else {
        f64::NAN
    };
    let row = EvalRow {
        run_id: row_base.0,
        method: row_base.1,
        noise_level: sim.noise.level,
        nmse: nmse(&pred, &truth)?,
        ssim: ssim(&pred, &truth, SSIM_K1, SSIM_K2)?,
        iterations: row_base.2,
        wall_ms: row_base.3,
        es_residual,
    };
    if let Some(csv) = &args.csv {
        append_csv(csv, EVAL_HEADER, &row.to_csv())?;
    }
    Ok(row)
}

fn append_csv(path: &Path, header: &str, line: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

/// Re-executes the run described by a manifest into `out`.
pub fn cmd_rerun(manifest_path: &Path, out: &Path) -> Result<(PathBuf, RunManifest)> {
    let manifest = RunManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    match manifest.command {
        Command::Simulate => cmd_simulate(&SimulateArgs {
            scene: SceneSource::File {
                path: base.join(&manifest.scene),
            },
            config: manifest.config,
            noise: manifest.noise,
            forward_solver: manifest.forward_solver,
            out: Some(out.to_path_buf()),
        }),
        Command::Invert => {
            let run = manifest
                .source_run
                .ok_or_else(|| Error::Format("inversion manifest without a source run".into()))?;
            let method = manifest
                .method
                .ok_or_else(|| Error::Format("inversion manifest without a method".into()))?;
            cmd_invert(&InvertArgs {
                run,
                method,
                out: Some(out.to_path_buf()),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepArgs {
    pub scene: SceneSource,
    pub config: SceneConfig,
    pub noise_levels: Vec<f64>,
    /// Overrides every shape's contrast; `None` keeps the scene's own.
    pub contrasts: Option<Vec<f64>>,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out: PathBuf,
}

/// One invert+eval of the cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub noise_level: f64,
    pub contrast: Option<f64>,
    pub seed: u64,
    pub method: String,
    pub result: std::result::Result<EvalRow, String>,
}

pub const SWEEP_RUNS: &str = "runs.csv";
pub const SWEEP_SUMMARY: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "noise_level,contrast,method,metric,mean,std,n_ok,n_failed";

fn cell_dir(out: &Path, noise: f64, contrast: Option<f64>, seed: u64) -> PathBuf {
    let c = contrast.map(|c| format!("_c{c}")).unwrap_or_default();
    out.join(format!("n{noise}{c}_s{seed}"))
}

/// Full cross product of noise levels, contrasts, seeds and methods. Cells run
/// in parallel on `jobs` threads; failures are recorded and the sweep goes on.
/// Writes per-run rows and a long-format summary (mean and sample standard
/// deviation per noise/contrast/method and metric).
pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRecord>> {
    use rayon::prelude::*;
    if args.noise_levels.is_empty() || args.methods.is_empty() || args.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one noise level, method and seed".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let contrasts: Vec<Option<f64>> = match &args.contrasts {
        Some(c) if !c.is_empty() => c.iter().map(|v| Some(*v)).collect(),
        _ => vec![None],
    };
    let mut cells = Vec::new();
    for &noise in &args.noise_levels {
        for &contrast in &contrasts {
            for &seed in &args.seeds {
                cells.push((noise, contrast, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_cell: Vec<Vec<SweepRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(noise, contrast, seed)| {
                let dir = cell_dir(&args.out, noise, contrast, seed);
                let record = |method: &str, result| SweepRecord {
                    noise_level: noise,
                    contrast,
                    seed,
                    method: method.to_string(),
                    result,
                };
                let sim = (|| -> Result<PathBuf> {
                    let scene = match contrast {
                        None => args.scene.clone(),
                        Some(c) => {
                            let shapes = with_contrast(&args.scene.shapes(&args.config)?, Complex64::new(c, 0.0))?;
                            std::fs::create_dir_all(&dir)?;
                            let path = dir.join("input_scene.json");
                            save_scene(&shapes, &path)?;
                            SceneSource::File { path }
                        }
                    };
                    let sim_args = SimulateArgs {
                        scene,
                        config: args.config.clone(),
                        noise: NoiseSpec { level: noise, seed },
                        forward_solver: SolveMethod::Iterative,
                        out: Some(dir.join("sim")),
                    };
                    Ok(cmd_simulate(&sim_args)?.0)
                })();
                match sim {
                    Err(e) => args
                        .methods
                        .iter()
                        .map(|m| record(m.name(), Err(format!("simulate: {e}"))))
                        .collect(),
                    Ok(sim_dir) => args
                        .methods
                        .iter()
                        .map(|m| {
                            let result = cmd_invert(&InvertArgs {
                                run: sim_dir.clone(),
                                method: m.clone(),
                                out: None,
                            })
                            .and_then(|(inv_dir, _)| {
                                cmd_eval(&EvalArgs {
                                    run: sim_dir.clone(),
                                    pred: inv_dir,
                                    csv: None,
                                })
                            })
                            .map_err(|e| e.to_string());
                            if let Err(e) = &result {
                                log::warn!("sweep cell {} / {}: {e}", dir.display(), m.name());
                            }
                            record(m.name(), result)
                        })
                        .collect(),
                }
            })
            .collect()
    });
    let records: Vec<SweepRecord> = per_cell.into_iter().flatten().collect();
    write_sweep_outputs(&args.out, &records)?;
    Ok(records)
}

fn write_sweep_outputs(out: &Path, records: &[SweepRecord]) -> Result<()> {
    let contrast_str = |c: Option<f64>| c.map(fmt_float).unwrap_or_default();
    let mut runs = format!("{EVAL_HEADER},contrast,seed,status\n");
    for r in records {
        match &r.result {
            Ok(row) => {
                let _ = writeln!(runs, "{},{},{},ok", row.to_csv(), contrast_str(r.contrast), r.seed);
            }
            Err(e) => {
                let msg = e.replace(['\n', ','], ";");
                let _ = writeln!(
                    runs,
                    ",{},{},,,,,,{},{},failed: {msg}",
                    r.method,
                    fmt_float(r.noise_level),
                    contrast_str(r.contrast),
                    r.seed
                );
            }
        }
    }
    std::fs::write(out.join(SWEEP_RUNS), runs)?;

    // group in first-seen order
    let mut keys: Vec<(u64, Option<u64>, String)> = Vec::new();
    for r in records {
        let k = (r.noise_level.to_bits(), r.contrast.map(f64::to_bits), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let metrics: [(&str, fn(&EvalRow) -> f64); 5] = [
        ("nmse", |r| r.nmse),
        ("ssim", |r| r.ssim),
        ("es_residual", |r| r.es_residual),
        ("iterations", |r| r.iterations as f64),
        ("wall_ms", |r| r.wall_ms),
    ];
    for (noise_bits, contrast_bits, method) in keys {
        let group: Vec<&SweepRecord> = records
            .iter()
            .filter(|r| r.noise_level.to_bits() == noise_bits && r.contrast.map(f64::to_bits) == contrast_bits && r.method == method)
            .collect();
        let ok: Vec<&EvalRow> = group.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let failed = group.len() - ok.len();
        for (name, get) in metrics {
            let values: Vec<f64> = ok.iter().map(|r| get(r)).filter(|v| !v.is_nan()).collect();
            let (mean, std) = mean_std(&values);
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{}",
                fmt_float(f64::from_bits(noise_bits)),
                contrast_str(contrast_bits.map(f64::from_bits)),
                method,
                name,
                fmt_float(mean),
                fmt_float(std),
                values.len(),
                failed
            );
        }
    }
    std::fs::write(out.join(SWEEP_SUMMARY), summary)?;
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value, NaN for none).
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
