use num_complex::Complex64;
use proptest::prelude::*;

use tmis::metrics::{layer_weights, nmse, snr_weighted_loss, ssim, total_loss, tv_seminorm, LossParams, WeightConvention, SSIM_K1, SSIM_K2};
use tmis::scene::ContrastMap;

fn map(m: usize, values: &[f64]) -> ContrastMap {
    ContrastMap::new(m, values.iter().map(|v| Complex64::new(*v, 0.0)).collect()).unwrap()
}

fn image(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..2.0, m * m)
}

/// Rescales `v` onto `[lo, hi]` with both ends attained.
fn span(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let a = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let b = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| lo + (x - a) / (b - a) * (hi - lo)).collect()
}

proptest! {
    #[test]
    fn tv_is_absolutely_homogeneous(v in image(6), s in -5.0f64..5.0) {
        let chi = map(6, &v);
        let scaled = ContrastMap::unconstrained(6, chi.values().iter().map(|z| z * s).collect()).unwrap();
        prop_assert!((tv_seminorm(&scaled) - s.abs() * tv_seminorm(&chi)).abs() <= 1e-12 * (1.0 + tv_seminorm(&chi)));
    }

    #[test]
    fn tv_of_a_constant_is_zero(m in 1usize..12, c in 0.0f64..3.0) {
        prop_assert_eq!(tv_seminorm(&ContrastMap::constant(m, Complex64::new(c, c / 2.0)).unwrap()), 0.0);
    }

    #[test]
    fn ssim_is_symmetric_for_equal_range_pairs(a in image(5), b in image(5)) {
        prop_assume!(a.iter().cloned().fold(0.0, f64::max) > a.iter().cloned().fold(2.0, f64::min));
        prop_assume!(b.iter().cloned().fold(0.0, f64::max) > b.iter().cloned().fold(2.0, f64::min));
        let (x, y) = (map(5, &span(&a, 0.0, 1.0)), map(5, &span(&b, 0.0, 1.0)));
        let xy = ssim(&x, &y, SSIM_K1, SSIM_K2).unwrap();
        let yx = ssim(&y, &x, SSIM_K1, SSIM_K2).unwrap();
        prop_assert!((xy - yx).abs() <= 1e-12);
        prop_assert!(xy <= 1.0 + 1e-12);
    }

    #[test]
    fn ssim_of_self_is_one(v in image(7)) {
        let x = map(7, &v);
        prop_assert!((ssim(&x, &x, SSIM_K1, SSIM_K2).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn nmse_of_zero_prediction_is_one(v in image(4)) {
        prop_assume!(v.iter().any(|x| *x > 0.0));
        let truth = map(4, &v);
        prop_assert_eq!(nmse(&truth, &truth).unwrap(), 0.0);
        prop_assert!((nmse(&ContrastMap::zeros(4), &truth).unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn total_loss_is_monotone_in_each_layer(losses in prop::collection::vec(0.0f64..10.0, 7), k in 0usize..7, bump in 1e-6f64..1.0, c in 0.0f64..0.99) {
        let params = LossParams { c, ..LossParams::default() };
        let base = total_loss(&losses, &params).unwrap();
        let mut more = losses.clone();
        more[k] += bump;
        prop_assert!(total_loss(&more, &params).unwrap() >= base);
    }

    #[test]
    fn weights_decay_geometrically(c in 0.01f64..0.99, layers in 1usize..12) {
        let w = layer_weights(&LossParams { c, layers, ..LossParams::default() }).unwrap();
        prop_assert_eq!(w[layers - 1], 1.0);
        for pair in w.windows(2) {
            prop_assert!((pair[0] - c * pair[1]).abs() <= 1e-15);
        }
        let lit = layer_weights(&LossParams { c, layers, convention: WeightConvention::Literal, ..LossParams::default() }).unwrap();
        for (a, b) in lit.iter().zip(&w) {
            prop_assert!((a * c - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn snr_weight_scales_inverse_square(level in 0.01f64..0.5, base in 0.0f64..5.0) {
        let p = LossParams::default();
        let w = snr_weighted_loss(base, level, &p).unwrap();
        prop_assert!((w - 0.04 / (level * level) * base).abs() <= 1e-12 * (1.0 + w));
    }
}

#[test]
fn c_zero_keeps_only_the_last_layer() {
    let losses = [5.0, 4.0, 3.0, 2.5, 2.0, 1.5, 0.75];
    let p = LossParams { c: 0.0, ..LossParams::default() };
    assert_eq!(total_loss(&losses, &p).unwrap(), 0.75);
}

#[test]
fn reference_weights_and_snr() {
    let w = layer_weights(&LossParams::default()).unwrap();
    let expected = [0.262144, 0.32768, 0.4096, 0.512, 0.64, 0.8, 1.0];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(snr_weighted_loss(1.0, 0.2, &LossParams::default()).unwrap(), 1.0);
}
