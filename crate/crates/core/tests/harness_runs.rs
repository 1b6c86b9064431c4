mod common;

use std::path::Path;

use tmis::config::SceneConfig;
use tmis::field::FieldKind;
use tmis::forward::NoiseSpec;
use tmis::greens::GreensSurface;
use tmis::harness::*;
use tmis::inversion::{Init, InversionOptions};
use tmis::io;
use tmis::scene::save_scene;
use tmis::unrolled::predict_scattered;

fn config() -> SceneConfig {
    common::small(16, 12)
}

fn scene_file(dir: &Path) -> SceneSource {
    let path = dir.join("disk.json");
    save_scene(&common::disk(0.05, 0.5), &path).unwrap();
    SceneSource::File { path }
}

fn simulate(dir: &Path, name: &str, noise: f64) -> std::path::PathBuf {
    let mut args = SimulateArgs::new(scene_file(dir), config(), NoiseSpec { level: noise, seed: 3 });
    args.out = Some(dir.join(name));
    cmd_simulate(&args).unwrap().0
}

fn bim(iters: usize) -> MethodSpec {
    MethodSpec::Bim {
        options: InversionOptions {
            iters,
            ..InversionOptions::default()
        },
        init: Init::Bps,
    }
}

#[test]
fn truth_scores_perfectly_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", 0.05);
    let row = cmd_eval(&EvalArgs {
        run: sim.clone(),
        pred: sim.join("truth_inverse.bin"),
        csv: None,
    })
    .unwrap();
    assert_eq!(row.nmse, 0.0);
    assert!((row.ssim - 1.0).abs() < 1e-12);
    assert_eq!(row.method, "external");
    assert!(row.es_residual.is_nan());
}

#[test]
fn eval_csv_has_one_header_and_recomputable_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", 0.05);
    let (inv, _) = cmd_invert(&InvertArgs {
        run: sim.clone(),
        method: bim(3),
        out: None,
    })
    .unwrap();
    assert_eq!(inv, sim.join("bim"));
    let csv = tmp.path().join("out/eval.csv");
    let args = EvalArgs {
        run: sim.clone(),
        pred: inv.clone(),
        csv: Some(csv.clone()),
    };
    let row = cmd_eval(&args).unwrap();
    cmd_eval(&args).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], EVAL_HEADER);
    assert_eq!(lines[1], lines[2]);
    assert_eq!(lines[1].split(',').count(), 8);
    assert_eq!(row.iterations, 3);

    let chi = io::read_contrast(&inv.join("contrast.bin")).unwrap();
    let etot = io::read_field(&inv.join("etot.bin"), FieldKind::Total).unwrap();
    let es = io::read_field(&sim.join("es_noisy.bin"), FieldKind::Scattered).unwrap();
    let gs = GreensSurface::assemble(&config(), 12).unwrap();
    let predicted = predict_scattered(&chi, &etot, &gs).unwrap();
    let by_hand = es.values.sub(&predicted).unwrap().frobenius_norm() / es.frobenius_norm();
    assert!((row.es_residual - by_hand).abs() <= 1e-12 * by_hand);

    let trace = std::fs::read_to_string(inv.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,data_residual,wall_ms"));
    assert_eq!(trace.lines().count(), 4);
    assert!(inv.join("trace/iter_003.bin").exists());
}

#[test]
fn noiseless_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(tmp.path(), "a", 0.0);
    let b = simulate(tmp.path(), "b", 0.0);
    for f in ["es_clean.bin", "es_noisy.bin", "einc.bin", "truth_inverse.bin", "truth.pgm"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read(a.join("es_clean.bin")).unwrap(), std::fs::read(a.join("es_noisy.bin")).unwrap());
    let ma = RunManifest::load(&a.join(MANIFEST)).unwrap();
    let mb = RunManifest::load(&b.join(MANIFEST)).unwrap();
    assert_eq!(ma.run_id, mb.run_id);
}

#[test]
fn rerun_reproduces_a_simulation() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", 0.1);
    let (again, m) = cmd_rerun(&sim.join(MANIFEST), &tmp.path().join("again")).unwrap();
    assert_eq!(m.run_id, RunManifest::load(&sim.join(MANIFEST)).unwrap().run_id);
    assert_eq!(std::fs::read(sim.join("es_noisy.bin")).unwrap(), std::fs::read(again.join("es_noisy.bin")).unwrap());
}

#[test]
fn manifest_version_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim", 0.0);
    let path = sim.join(MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
    std::fs::write(&path, text).unwrap();
    let err = RunManifest::load(&path).unwrap_err().to_string();
    assert!(err.contains("99"), "{err}");
}

#[test]
fn default_output_goes_under_the_root_by_run_id() {
    let tmp = tempfile::tempdir().unwrap();
    // the only test touching the variable
    unsafe { std::env::set_var(OUT_ROOT_ENV, tmp.path().join("root")) };
    let args = SimulateArgs::new(scene_file(tmp.path()), config(), NoiseSpec { level: 0.0, seed: 0 });
    let (dir, m) = cmd_simulate(&args).unwrap();
    unsafe { std::env::remove_var(OUT_ROOT_ENV) };
    assert_eq!(dir, tmp.path().join("root").join(format!("sim-{}", m.run_id)));
    assert_eq!(m.run_id.len(), 16);
    let left: Vec<_> = std::fs::read_dir(tmp.path().join("root")).unwrap().collect();
    assert_eq!(left.len(), 1);
}

#[test]
fn single_cell_sweep_matches_invert_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = scene_file(tmp.path());
    let sweep = SweepArgs {
        scene: scene.clone(),
        config: config(),
        noise_levels: vec![0.1],
        contrasts: None,
        methods: vec![MethodSpec::Bps, bim(2)],
        seeds: vec![4],
        jobs: 1,
        out: tmp.path().join("sweep"),
    };
    let records = cmd_sweep(&sweep).unwrap();
    assert_eq!(records.len(), 2);

    let mut args = SimulateArgs::new(scene, config(), NoiseSpec { level: 0.1, seed: 4 });
    args.out = Some(tmp.path().join("single"));
    let (sim, _) = cmd_simulate(&args).unwrap();
    for (rec, method) in records.iter().zip([MethodSpec::Bps, bim(2)]) {
        let (inv, _) = cmd_invert(&InvertArgs {
            run: sim.clone(),
            method,
            out: None,
        })
        .unwrap();
        let row = cmd_eval(&EvalArgs {
            run: sim.clone(),
            pred: inv,
            csv: None,
        })
        .unwrap();
        let swept = rec.result.as_ref().unwrap();
        assert_eq!(swept.run_id, row.run_id);
        assert_eq!(swept.nmse, row.nmse);
        assert_eq!(swept.ssim, row.ssim);
        assert_eq!(swept.es_residual, row.es_residual);
    }
    let runs = std::fs::read_to_string(tmp.path().join("sweep").join(SWEEP_RUNS)).unwrap();
    assert_eq!(runs.lines().next().unwrap(), format!("{EVAL_HEADER},contrast,seed,status"));
    let summary = std::fs::read_to_string(tmp.path().join("sweep").join(SWEEP_SUMMARY)).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER);
    // two methods, five metrics each
    assert_eq!(summary.lines().count(), 11);
}

#[test]
fn sweep_records_failures_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = SweepArgs {
        scene: scene_file(tmp.path()),
        config: config(),
        noise_levels: vec![0.0, 0.2],
        contrasts: Some(vec![0.3]),
        methods: vec![MethodSpec::Bps, bim(0)],
        seeds: vec![1, 2],
        jobs: 2,
        out: tmp.path().join("sweep"),
    };
    let records = cmd_sweep(&sweep).unwrap();
    assert_eq!(records.len(), 8);
    for r in &records {
        assert_eq!(r.result.is_ok(), r.method == "bps", "{r:?}");
        assert_eq!(r.contrast, Some(0.3));
    }
    let runs = std::fs::read_to_string(tmp.path().join("sweep").join(SWEEP_RUNS)).unwrap();
    assert_eq!(runs.lines().filter(|l| l.contains(",failed: ")).count(), 4);
    let summary = std::fs::read_to_string(tmp.path().join("sweep").join(SWEEP_SUMMARY)).unwrap();
    let failed_nmse: Vec<&str> = summary.lines().filter(|l| l.contains(",bim,nmse,")).collect();
    assert_eq!(failed_nmse.len(), 2);
    for line in failed_nmse {
        assert!(line.ends_with(",,,0,2"), "{line}");
    }
}
