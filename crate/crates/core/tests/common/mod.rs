#![allow(dead_code)]

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tmis::config::SceneConfig;
use tmis::field::FieldSet;
use tmis::forward::{add_noise, ForwardModel, NoiseSpec, SolveMethod};
use tmis::greens::{GreensSurface, GreensVolume};
use tmis::inversion::InversionProblem;
use tmis::scene::{rasterize, ContrastMap, ShapeSpec};

pub fn gaussian(seed: u64, n: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect()
}

pub fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    d / tmis::field::norm(b).max(f64::MIN_POSITIVE)
}

pub fn disk(radius: f64, chi: f64) -> Vec<ShapeSpec> {
    vec![ShapeSpec::disk([0.0, 0.0], radius, Complex64::new(chi, 0.0))]
}

/// Quick geometry: 8 transmitters, 16 receivers.
pub fn small(forward: usize, inversion: usize) -> SceneConfig {
    SceneConfig {
        n_tx: 8,
        n_rx: 16,
        forward_grid: forward,
        inversion_grid: inversion,
        ..SceneConfig::default()
    }
}

pub struct Data {
    pub es: FieldSet,
    pub einc: FieldSet,
    pub gd: GreensVolume,
    pub gs: GreensSurface,
    pub truth: ContrastMap,
}

impl Data {
    pub fn simulate(config: &SceneConfig, shapes: &[ShapeSpec], noise: f64, seed: u64) -> Data {
        let forward = ForwardModel::new(config, config.forward_grid).unwrap();
        let chi = rasterize(shapes, config, config.forward_grid).unwrap();
        let (_, es) = forward.simulate(&chi, SolveMethod::Iterative).unwrap();
        let es = add_noise(&es, NoiseSpec { level: noise, seed }).unwrap();
        let inverse = ForwardModel::new(config, config.inversion_grid).unwrap();
        Data {
            es,
            truth: rasterize(shapes, config, config.inversion_grid).unwrap(),
            einc: inverse.einc,
            gd: inverse.gd,
            gs: inverse.gs,
        }
    }

    pub fn problem(&self) -> InversionProblem<'_> {
        InversionProblem::new(&self.es, &self.einc, &self.gd, &self.gs).unwrap()
    }
}
