mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use common::{disk, gaussian, rel_diff, small, Data};
use tmis::field::{norm, FieldKind, FieldSet};
use tmis::forward::{solve_total_field, SolveMethod};
use tmis::inversion::{
    bim, bps, initial_contrast, tikhonov_direct, tikhonov_solve, vbim, Init, InversionOptions, InversionProblem, LambdaScaling,
    RegularizedLsProblem, Stop,
};
use tmis::linop::{DenseOperator, LinearOperator};
use tmis::scene::ContrastMap;
use tmis::stacked::{dense_rows, StackedOperator};

fn fixed(iters: usize) -> InversionOptions {
    InversionOptions {
        iters,
        early_stop: None,
        ..InversionOptions::default()
    }
}

#[test]
fn bim_noiseless_residual_non_increasing_after_second_iteration() {
    let config = tmis::config::SceneConfig::default();
    let data = Data::simulate(&config, &disk(0.03, 0.3), 0.0, 0);
    let problem = data.problem();
    let chi0 = initial_contrast(&problem, &Init::Bps).unwrap();
    let trace = bim(&problem, &chi0, &fixed(10)).unwrap().into_result().unwrap();
    let r = trace.residuals();
    assert_eq!(r.len(), 10);
    for k in 2..r.len() {
        assert!(r[k] <= r[k - 1] + 1e-9, "residual rose at iteration {}: {r:?}", k + 1);
    }
}

#[test]
fn bim_and_vbim_coincide_at_first_iteration_from_zero() {
    let config = common::small(8, 8);
    let config = tmis::config::SceneConfig {
        n_tx: 16,
        n_rx: 32,
        ..config
    };
    let data = Data::simulate(&config, &disk(0.05, 0.4), 0.0, 0);
    let problem = data.problem();
    let opts = InversionOptions {
        lambda: 0.0,
        lambda_scaling: LambdaScaling::Absolute,
        ..fixed(1)
    };
    let zero = ContrastMap::zeros(8);
    let b = bim(&problem, &zero, &opts).unwrap();
    let v = vbim(&problem, &zero, &opts).unwrap();
    let (cb, cv) = (b.final_contrast().unwrap(), v.final_contrast().unwrap());
    assert!(rel_diff(cv.values(), cb.values()) <= 1e-8);
}

#[test]
fn trace_lengths_follow_the_iteration_count() {
    let data = Data::simulate(&small(20, 16), &disk(0.03, 0.4), 0.05, 1);
    let problem = data.problem();
    let chi0 = initial_contrast(&problem, &Init::Bps).unwrap();
    for iters in [1, 3] {
        let t = vbim(&problem, &chi0, &fixed(iters)).unwrap();
        assert_eq!(t.len(), iters);
        assert!(matches!(t.stop, Stop::Completed));
        let iterations: Vec<usize> = t.entries.iter().map(|e| e.iteration).collect();
        assert_eq!(iterations, (1..=iters).collect::<Vec<_>>());
    }
}

#[test]
fn forward_failure_is_recorded_with_its_iteration() {
    let data = Data::simulate(&small(20, 16), &disk(0.03, 0.4), 0.0, 0);
    let problem = data.problem();
    let chi0 = initial_contrast(&problem, &Init::Bps).unwrap();
    let opts = InversionOptions {
        forward_tol: 0.0,
        ..fixed(3)
    };
    let trace = bim(&problem, &chi0, &opts).unwrap();
    assert!(matches!(trace.stop, Stop::Aborted { iteration: 0, .. }), "{:?}", trace.stop);
    assert!(trace.is_empty());
    let err = trace.into_result().unwrap_err();
    assert!(err.is_numerical());
}

#[test]
fn every_iterate_is_nonnegative() {
    let data = Data::simulate(&small(20, 16), &disk(0.04, 0.6), 0.2, 7);
    let problem = data.problem();
    let chi0 = initial_contrast(&problem, &Init::Bps).unwrap();
    for trace in [bim(&problem, &chi0, &fixed(3)).unwrap(), vbim(&problem, &chi0, &fixed(3)).unwrap()] {
        for e in &trace.entries {
            assert!(e.contrast.values().iter().all(|z| z.re >= 0.0 && z.im >= 0.0));
        }
    }
}

#[test]
fn planted_recovery_through_both_solvers() {
    let config = tmis::config::SceneConfig {
        n_tx: 16,
        n_rx: 32,
        ..small(8, 8)
    };
    let data = Data::simulate(&config, &disk(0.05, 0.3), 0.0, 0);
    let etot = solve_total_field(&data.truth, &data.einc, &data.gd, SolveMethod::DenseLu).unwrap();
    let op = StackedOperator::new(&etot, &data.gs).unwrap();
    let planted: Vec<Complex64> = gaussian(9, 64).into_iter().map(|z| z * 0.02).collect();
    let y = op.apply(&planted).unwrap();
    let cg = tikhonov_solve(&RegularizedLsProblem::new(&op, &y, 0.0).unwrap(), 1e-12, 500).unwrap();
    let direct = tikhonov_direct(op.rows(), op.cols(), &dense_rows(&op), &y, 0.0).unwrap();
    assert!(rel_diff(&cg, &planted) <= 1e-6, "cg {:e}", rel_diff(&cg, &planted));
    assert!(rel_diff(&direct, &planted) <= 1e-8, "direct {:e}", rel_diff(&direct, &planted));
}

#[test]
fn huge_lambda_shrinks_towards_zero() {
    let a = DenseOperator::new(12, 6, gaussian(3, 72)).unwrap();
    let b = gaussian(4, 12);
    let ahb = norm(&a.adjoint(&b).unwrap());
    let top = tmis::linop::spectral_norm_sqr(&a, 1e-10, 500).unwrap();
    let lambda = 1e12 * top;
    let x = tikhonov_solve(&RegularizedLsProblem::new(&a, &b, lambda).unwrap(), 1e-12, 100).unwrap();
    assert!(norm(&x) <= ahb / lambda * (1.0 + 1e-9));
    assert!(norm(&x) <= 1e-6 * ahb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bps_is_invariant_under_joint_scaling(re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let alpha = Complex64::new(re, im);
        prop_assume!(alpha.norm() > 1e-2);
        let data = Data::simulate(&small(16, 12), &disk(0.04, 0.5), 0.0, 0);
        let (chi, _) = bps(&data.problem()).unwrap();
        let es = FieldSet::new(FieldKind::Scattered, data.es.values.scaled(alpha));
        let einc = FieldSet::new(FieldKind::Incident, data.einc.values.scaled(alpha));
        let scaled = InversionProblem::new(&es, &einc, &data.gd, &data.gs).unwrap();
        let (chi2, _) = bps(&scaled).unwrap();
        prop_assert!(rel_diff(chi2.values(), chi.values()) <= 1e-10);
    }

    #[test]
    fn cg_and_direct_tikhonov_agree(rows in 2usize..14, cols in 2usize..14, seed in any::<u64>(), lambda in 1e-3f64..10.0) {
        let a = DenseOperator::new(rows, cols, gaussian(seed, rows * cols)).unwrap();
        let b = gaussian(seed ^ 0x55, rows);
        let cg = tikhonov_solve(&RegularizedLsProblem::new(&a, &b, lambda).unwrap(), 1e-13, 1000).unwrap();
        let direct = tikhonov_direct(rows, cols, &a.data, &b, lambda).unwrap();
        prop_assert!(rel_diff(&cg, &direct) <= 1e-8);
    }
}
