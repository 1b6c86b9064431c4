//! Reconstruction metrics and the layer-wise training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSet;
use crate::scene::ContrastMap;

fn same_grid(context: &'static str, a: &ContrastMap, b: &ContrastMap) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::shape(context, format!("{0}x{0}", b.grid()), format!("{0}x{0}", a.grid())));
    }
    Ok(())
}

/// `||pred - truth||_F^2 / ||truth||_F^2`.
pub fn nmse(pred: &ContrastMap, truth: &ContrastMap) -> Result<f64> {
    same_grid("nmse", pred, truth)?;
    let den: f64 = truth.values().iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Undefined("NMSE against an all-zero truth".into()));
    }
    let num: f64 = pred.values().iter().zip(truth.values()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Single-window SSIM of two real images with dynamic range `range`.
pub fn ssim_channel(x: &[f64], y: &[f64], range: f64, k1: f64, k2: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);
    (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Global SSIM. The dynamic range is that of the truth (1 if the truth is
/// constant). Lossy maps average the real and imaginary channels.
pub fn ssim(pred: &ContrastMap, truth: &ContrastMap, k1: f64, k2: f64) -> Result<f64> {
    same_grid("ssim", pred, truth)?;
    let channel = |map: &ContrastMap, imag: bool| -> Vec<f64> {
        map.values().iter().map(|z| if imag { z.im } else { z.re }).collect()
    };
    let one = |imag: bool| {
        let t = channel(truth, imag);
        let p = channel(pred, imag);
        let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
        let range = if hi - lo > 0.0 { hi - lo } else { 1.0 };
        ssim_channel(&p, &t, range, k1, k2)
    };
    if pred.is_lossy() || truth.is_lossy() {
        Ok(0.5 * (one(false) + one(true)))
    } else {
        Ok(one(false))
    }
}

/// Anisotropic total variation: forward differences along x and y, nothing
/// across the border, summed over the real and imaginary channels.
pub fn tv_seminorm(chi: &ContrastMap) -> f64 {
    tv_values(chi.grid(), chi.values())
}

fn tv_values(m: usize, v: &[num_complex::Complex64]) -> f64 {
    let d = |a: num_complex::Complex64, b: num_complex::Complex64| (a.re - b.re).abs() + (a.im - b.im).abs();
    let mut tv = 0.0;
    for r in 0..m {
        for c in 0..m {
            let here = v[r * m + c];
            if c + 1 < m {
                tv += d(v[r * m + c + 1], here);
            }
            if r + 1 < m {
                tv += d(v[(r + 1) * m + c], here);
            }
        }
    }
    tv
}

/// How the layer weights are indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// `w_k = c^(K-k)`: the last layer has weight 1.
    LastLayerUnit,
    /// `w_k = c^(K-1-k)` as printed, the last layer weighted `1/c`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_loss: f64,
    pub c: f64,
    pub layers: usize,
    pub convention: WeightConvention,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha: 0.5,
            beta: 1e-4,
            gamma_loss: 0.04,
            c: 0.8,
            layers: 7,
            convention: WeightConvention::LastLayerUnit,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if !(self.gamma_loss > 0.0) {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.c) {
            return Err(Error::Config(format!("decay c must lie in [0, 1), got {}", self.c)));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer".into()));
        }
        if self.convention == WeightConvention::Literal && self.c == 0.0 {
            return Err(Error::Config("the literal convention gives the last layer weight 1/c".into()));
        }
        Ok(())
    }
}

/// `w_1..w_K`, with `0^0 = 1`.
pub fn layer_weights(params: &LossParams) -> Result<Vec<f64>> {
    params.validate()?;
    let k_max = params.layers as i32;
    Ok((1..=k_max)
        .map(|k| {
            let e = match params.convention {
                WeightConvention::LastLayerUnit => k_max - k,
                WeightConvention::Literal => k_max - 1 - k,
            };
            if e == 0 { 1.0 } else { params.c.powi(e) }
        })
        .collect())
}

/// `L^chi + alpha L^E`, where
/// `L^chi = (||chi - chi*||^2 + beta TV(chi)) / N_chi` and
/// `L^E = ||E^t - E^t*||_F^2 / N_E`.
///
/// `N_chi` counts real elements (`M^2` per channel, two channels when either
/// map is lossy); `N_E` counts complex entries of the full field tensor.
pub fn layer_loss(chi_k: &ContrastMap, chi_truth: &ContrastMap, etot_k: &FieldSet, etot_truth: &FieldSet, params: &LossParams) -> Result<f64> {
    same_grid("layer_loss", chi_k, chi_truth)?;
    if etot_k.values.shape() != etot_truth.values.shape() {
        return Err(Error::shape("layer_loss", format!("{:?}", etot_truth.values.shape()), format!("{:?}", etot_k.values.shape())));
    }
    let channels = if chi_k.is_lossy() || chi_truth.is_lossy() { 2.0 } else { 1.0 };
    let n_chi = channels * chi_k.len() as f64;
    let mse_chi: f64 = chi_k.values().iter().zip(chi_truth.values()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let l_chi = (mse_chi + params.beta * tv_seminorm(chi_k)) / n_chi;
    let n_e = etot_k.values.as_vec().len() as f64;
    let l_e = etot_k.values.sub(&etot_truth.values)?.frobenius_norm().powi(2) / n_e;
    Ok(l_chi + params.alpha * l_e)
}

/// `sum_k w_k L_k`.
pub fn total_loss(per_layer: &[f64], params: &LossParams) -> Result<f64> {
    let w = layer_weights(params)?;
    if per_layer.len() != w.len() {
        return Err(Error::shape("total_loss", w.len(), per_layer.len()));
    }
    Ok(per_layer.iter().zip(&w).map(|(l, w)| l * w).sum())
}

/// `gamma / noise_level^2 * base`.
pub fn snr_weighted_loss(base: f64, noise_level: f64, params: &LossParams) -> Result<f64> {
    if !(noise_level > 0.0) {
        return Err(Error::Undefined(format!("SNR weight at noise level {noise_level}")));
    }
    // (sqrt(gamma) / level)^2 keeps the weight exact when level^2 == gamma
    let ratio = params.gamma_loss.sqrt() / noise_level;
    Ok(ratio * ratio * base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CMatrix, FieldKind};
    use num_complex::Complex64;

    fn map(m: usize, v: &[f64]) -> ContrastMap {
        ContrastMap::new(m, v.iter().map(|x| Complex64::new(*x, 0.0)).collect()).unwrap()
    }

    #[test]
    fn nmse_basics() {
        let t = map(2, &[1.0, 0.0, 2.0, 0.5]);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&ContrastMap::zeros(2), &t).unwrap(), 1.0);
        let doubled = map(2, &[2.0, 0.0, 4.0, 1.0]);
        assert!((nmse(&doubled, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&t, &ContrastMap::zeros(2)).is_err());
    }

    #[test]
    fn step_tv() {
        let v: Vec<f64> = (0..64).map(|n| if n % 8 < 4 { 1.0 } else { 0.0 }).collect();
        assert_eq!(tv_seminorm(&map(8, &v)), 8.0);
        assert_eq!(tv_seminorm(&map(8, &[0.7; 64])), 0.0);
    }

    #[test]
    fn ssim_of_anticorrelated_pair_is_negative() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - v).collect();
        assert!(ssim_channel(&x, &y, 3.0, SSIM_K1, SSIM_K2) < 0.0);
    }

    #[test]
    fn constant_truth_uses_unit_range() {
        let t = map(2, &[0.5; 4]);
        assert!((ssim(&t, &t, SSIM_K1, SSIM_K2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights() {
        let w = layer_weights(&LossParams::default()).unwrap();
        let expected = [0.262144, 0.32768, 0.4096, 0.512, 0.64, 0.8, 1.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let literal = LossParams {
            convention: WeightConvention::Literal,
            ..LossParams::default()
        };
        assert!((layer_weights(&literal).unwrap()[6] - 1.25).abs() < 1e-15);
        let c0 = LossParams { c: 0.0, ..LossParams::default() };
        assert_eq!(layer_weights(&c0).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn snr_weight() {
        let p = LossParams::default();
        assert_eq!(snr_weighted_loss(1.0, 0.2, &p).unwrap(), 1.0);
        assert!((snr_weighted_loss(1.0, 0.1, &p).unwrap() - 4.0).abs() < 1e-12);
        assert!(snr_weighted_loss(1.0, 0.0, &p).is_err());
    }

    #[test]
    fn hand_computed_layer_loss() {
        let truth = map(2, &[1.0, 0.0, 0.0, 1.0]);
        let pred = map(2, &[0.5, 0.0, 0.0, 1.0]);
        let e_truth = FieldSet::new(FieldKind::Total, CMatrix::from_col_major(4, 1, vec![Complex64::new(1.0, 0.0); 4]).unwrap());
        let mut e = e_truth.clone();
        e.values.set(0, 0, Complex64::new(1.0, 2.0));
        let p = LossParams::default();
        // mse 0.25; TV of pred: |0-0.5| + |0-0.5| + |1-0| + |1-0| = 3
        // field: |2i|^2 = 4 over 4 entries
        let expected = (0.25 + 1e-4 * 3.0) / 4.0 + 0.5 * 4.0 / 4.0;
        let got = layer_loss(&pred, &truth, &e, &e_truth, &p).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}
