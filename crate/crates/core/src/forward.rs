//! Forward model: incident fields, the state equation, the data equation and
//! measurement noise.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::field::{CMatrix, FieldKind, FieldSet};
use crate::greens::{ApplyPath, GreensSurface, GreensVolume};
use crate::linop::{bicgstab, KrylovOptions};
use crate::scene::ContrastMap;
use crate::special::hankel1_both;

/// Line-source incident fields `E^i_p(r_n) = (i/4) H0(k0 |r_n - r^i_p|)` on a
/// `cells x cells` grid, one column per transmitter.
pub fn incident_fields(config: &SceneConfig, cells: usize) -> Result<FieldSet> {
    config.validate()?;
    let grid = config.grid(cells);
    let half = 0.5 * config.doi_side_m;
    let txs = config.transmitter_positions();
    if let Some(t) = txs.iter().find(|t| t[0].abs() <= half && t[1].abs() <= half) {
        return Err(Error::Config(format!("transmitter at ({}, {}) is inside the DOI", t[0], t[1])));
    }
    let k0 = config.wavenumber();
    let centers = grid.centers();
    let columns: Result<Vec<Vec<Complex64>>> = txs
        .par_iter()
        .map(|tx| {
            centers
                .iter()
                .map(|c| {
                    let d = ((c[0] - tx[0]).powi(2) + (c[1] - tx[1]).powi(2)).sqrt();
                    let (h0, _) = hankel1_both(k0 * d)?;
                    Ok(Complex64::new(0.0, 0.25) * h0)
                })
                .collect()
        })
        .collect();
    Ok(FieldSet::new(FieldKind::Incident, CMatrix::from_columns(grid.len(), columns?)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// LU of the dense `I - G_D diag(chi)`, factorized once for all incidences.
    DenseLu,
    /// BiCGSTAB with FFT-accelerated `G_D`.
    Iterative,
}

pub const FORWARD_TOL: f64 = 1e-10;
pub const FORWARD_MAX_ITER: usize = 2000;

fn check_grid(chi: &ContrastMap, gd: &GreensVolume, n_points: usize, context: &'static str) -> Result<()> {
    if chi.len() != gd.len() {
        return Err(Error::shape(context, format!("{} cells (G_D)", gd.len()), format!("{} cells (contrast)", chi.len())));
    }
    if n_points != gd.len() {
        return Err(Error::shape(context, format!("{} rows", gd.len()), format!("{n_points} rows")));
    }
    Ok(())
}

/// `x - G_D (chi .* x)`.
pub fn state_operator_apply(gd: &GreensVolume, chi: &[Complex64], x: &[Complex64]) -> Result<Vec<Complex64>> {
    let cx: Vec<Complex64> = chi.iter().zip(x).map(|(c, v)| c * v).collect();
    let g = gd.apply(&cx, ApplyPath::Fft)?;
    Ok(x.iter().zip(g).map(|(v, gv)| v - gv).collect())
}

/// Solves `(I - G_D diag(chi)) E^t_p = E^i_p` for every incidence.
pub fn solve_total_field(chi: &ContrastMap, einc: &FieldSet, gd: &GreensVolume, method: SolveMethod) -> Result<FieldSet> {
    solve_total_field_with(chi, einc, gd, method, KrylovOptions {
        tol: FORWARD_TOL,
        max_iter: FORWARD_MAX_ITER,
    })
}

pub fn solve_total_field_with(
    chi: &ContrastMap,
    einc: &FieldSet,
    gd: &GreensVolume,
    method: SolveMethod,
    opts: KrylovOptions,
) -> Result<FieldSet> {
    einc.expect(FieldKind::Incident, "solve_total_field")?;
    check_grid(chi, gd, einc.n_points(), "solve_total_field")?;
    if chi.values().iter().all(|z| z.norm() == 0.0) {
        return Ok(FieldSet::new(FieldKind::Total, einc.values.clone()));
    }
    let values = match method {
        SolveMethod::DenseLu => dense_lu_solve(chi, &einc.values, gd)?,
        SolveMethod::Iterative => {
            let chi_v = chi.values();
            let cols: Result<Vec<Vec<Complex64>>> = (0..einc.n_incidences())
                .into_par_iter()
                .map(|p| {
                    let b = einc.column(p);
                    bicgstab(|x| state_operator_apply(gd, chi_v, x), b, b.to_vec(), opts).map(|o| o.x)
                })
                .collect();
            CMatrix::from_columns(gd.len(), cols?)?
        }
    };
    if !values.is_finite() {
        return Err(Error::Singular("total-field solve produced non-finite values".into()));
    }
    Ok(FieldSet::new(FieldKind::Total, values))
}

fn dense_lu_solve(chi: &ContrastMap, rhs: &CMatrix, gd: &GreensVolume) -> Result<CMatrix> {
    let n = gd.len();
    let dense = gd.dense()?;
    let chi_v = chi.values();
    let system = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
        delta - dense[i * n + j] * chi_v[j]
    });
    let lu = system.lu();
    let b = DMatrix::from_column_slice(n, rhs.cols(), rhs.as_vec());
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular("I - G_D diag(chi) is singular to working precision".into()))?;
    CMatrix::from_col_major(n, rhs.cols(), x.as_slice().to_vec())
}

/// `E^s = G_S diag(chi) E^t`, column by column.
pub fn scattered_field(chi: &ContrastMap, etot: &FieldSet, gs: &GreensSurface) -> Result<FieldSet> {
    if chi.len() != gs.n_cells() || etot.n_points() != gs.n_cells() {
        return Err(Error::shape(
            "scattered_field",
            format!("{} cells", gs.n_cells()),
            format!("contrast {} / field {}", chi.len(), etot.n_points()),
        ));
    }
    Ok(FieldSet::new(FieldKind::Scattered, apply_data_operator(chi.values(), &etot.values, gs)?))
}

/// `G_S diag(chi) X` for an `M^2 x N_i` matrix `X`.
pub fn apply_data_operator(chi: &[Complex64], x: &CMatrix, gs: &GreensSurface) -> Result<CMatrix> {
    let cols: Result<Vec<Vec<Complex64>>> = (0..x.cols())
        .into_par_iter()
        .map(|p| {
            let j: Vec<Complex64> = chi.iter().zip(x.col(p)).map(|(c, e)| c * e).collect();
            gs.apply(&j)
        })
        .collect();
    CMatrix::from_columns(gs.n_rx(), cols?)
}

/// Additive noise with `||N||_F / ||E^s||_F` equal to `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

/// Adds circular complex Gaussian noise, rescaled so the Frobenius ratio is
/// exactly the requested level.
pub fn add_noise(es: &FieldSet, spec: NoiseSpec) -> Result<FieldSet> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::Config(format!("noise level must be finite and >= 0, got {}", spec.level)));
    }
    if spec.level == 0.0 {
        return Ok(es.clone());
    }
    let signal = es.frobenius_norm();
    if signal == 0.0 {
        return Err(Error::Undefined("noise level relative to a zero scattered field".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, cols) = es.values.shape();
    let raw: Vec<Complex64> = (0..rows * cols)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    let noise = CMatrix::from_col_major(rows, cols, raw)?;
    let scale = spec.level * signal / noise.frobenius_norm();
    let noisy = es.values.add(&noise.scaled(Complex64::new(scale, 0.0)))?;
    Ok(FieldSet::new(es.kind, noisy))
}

/// Everything needed to simulate one configuration on one grid.
pub struct ForwardModel {
    pub config: SceneConfig,
    pub cells: usize,
    pub einc: FieldSet,
    pub gd: GreensVolume,
    pub gs: GreensSurface,
}

impl ForwardModel {
    pub fn new(config: &SceneConfig, cells: usize) -> Result<Self> {
        Ok(ForwardModel {
            config: config.clone(),
            cells,
            einc: incident_fields(config, cells)?,
            gd: GreensVolume::assemble(config, cells)?,
            gs: GreensSurface::assemble(config, cells)?,
        })
    }

    /// Returns `(E^t, E^s)` for `chi`.
    pub fn simulate(&self, chi: &ContrastMap, method: SolveMethod) -> Result<(FieldSet, FieldSet)> {
        let etot = solve_total_field(chi, &self.einc, &self.gd, method)?;
        let es = scattered_field(chi, &etot, &self.gs)?;
        Ok((etot, es))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{rasterize, ShapeSpec};

    fn small_config() -> SceneConfig {
        SceneConfig {
            n_tx: 4,
            n_rx: 8,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn incident_field_at_center_matches_scalar_formula() {
        let c = small_config();
        // even grid has no centre cell; 3x3 centre cell sits at the origin
        let einc = incident_fields(&c, 3).unwrap();
        let (h0, _) = hankel1_both(c.wavenumber() * 1.67).unwrap();
        for p in 0..4 {
            let v = einc.column(p)[4];
            assert!((v.norm() - 0.25 * h0.norm()).abs() < 1e-15);
        }
        assert!(einc.values.is_finite());
        assert!(einc.values.as_vec().iter().all(|z| z.norm() > 0.0));
    }

    #[test]
    fn zero_contrast_gives_incident_field() {
        let c = small_config();
        let model = ForwardModel::new(&c, 8).unwrap();
        let chi = ContrastMap::zeros(8);
        for method in [SolveMethod::DenseLu, SolveMethod::Iterative] {
            let (etot, es) = model.simulate(&chi, method).unwrap();
            assert_eq!(etot.values, model.einc.values);
            assert_eq!(es.frobenius_norm(), 0.0);
        }
    }

    #[test]
    fn solution_satisfies_state_equation() {
        let c = small_config();
        let model = ForwardModel::new(&c, 12).unwrap();
        let chi = rasterize(&[ShapeSpec::disk([0.0, 0.01], 0.05, Complex64::new(0.8, 0.2))], &c, 12).unwrap();
        let (etot, _) = model.simulate(&chi, SolveMethod::Iterative).unwrap();
        let mut res = 0.0;
        for p in 0..4 {
            let a = state_operator_apply(&model.gd, chi.values(), etot.column(p)).unwrap();
            res += a.iter().zip(model.einc.column(p)).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
        }
        assert!(res.sqrt() / model.einc.frobenius_norm() <= 1e-9);
    }

    #[test]
    fn noise_levels_are_exact_and_deterministic() {
        let c = small_config();
        let model = ForwardModel::new(&c, 8).unwrap();
        let chi = rasterize(&[ShapeSpec::disk([0.0, 0.0], 0.04, Complex64::new(1.0, 0.0))], &c, 8).unwrap();
        let (_, es) = model.simulate(&chi, SolveMethod::DenseLu).unwrap();
        assert_eq!(add_noise(&es, NoiseSpec { level: 0.0, seed: 1 }).unwrap(), es);
        let a = add_noise(&es, NoiseSpec { level: 0.1, seed: 5 }).unwrap();
        let b = add_noise(&es, NoiseSpec { level: 0.1, seed: 5 }).unwrap();
        assert_eq!(a, b);
        let ratio = a.values.sub(&es.values).unwrap().frobenius_norm() / es.frobenius_norm();
        assert!((ratio - 0.1).abs() < 1e-12);
        // 10% noise is 20 dB under SNR = 1 / level^2
        assert!((10.0 * (1.0 / (0.1f64 * 0.1)).log10() - 20.0).abs() < 1e-12);

        let zero = FieldSet::new(FieldKind::Scattered, CMatrix::zeros(8, 4));
        assert!(add_noise(&zero, NoiseSpec { level: 0.1, seed: 0 }).is_err());
        assert!(add_noise(&es, NoiseSpec { level: -0.1, seed: 0 }).is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let c = small_config();
        let model = ForwardModel::new(&c, 8).unwrap();
        assert!(solve_total_field(&ContrastMap::zeros(6), &model.einc, &model.gd, SolveMethod::Iterative).is_err());
        let wrong_kind = FieldSet::new(FieldKind::Total, model.einc.values.clone());
        assert!(solve_total_field(&ContrastMap::zeros(8), &wrong_kind, &model.gd, SolveMethod::Iterative).is_err());
        let etot = FieldSet::new(FieldKind::Total, CMatrix::zeros(36, 4));
        assert!(scattered_field(&ContrastMap::zeros(8), &etot, &model.gs).is_err());
    }
}
