//! Scene descriptions, rasterization onto the DOI grid, and random scene sampling.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Grid, SceneConfig};
use crate::error::{Error, Result};
use crate::io;

/// Per-cell subsampling used to estimate covered-area fractions.
const SUBSAMPLES: usize = 4;

/// Grayscale raster with intensities in `[0, 1]`, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Scene("raster image is empty".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::shape("GrayImage", width * height, pixels.len()));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Scene("raster intensities must lie in [0, 1]".into()));
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// Nearest pixel to the fractional position `(u, v)` in `[0, 1)^2`,
    /// `u` left to right and `v` top to bottom.
    fn sample(&self, u: f64, v: f64) -> f64 {
        let col = ((u * self.width as f64) as usize).min(self.width - 1);
        let row = ((v * self.height as f64) as usize).min(self.height - 1);
        self.pixels[row * self.width + col]
    }
}

/// One scatterer. Contrast real and imaginary parts are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    Disk {
        center_m: [f64; 2],
        radius_m: f64,
        contrast: Complex64,
    },
    Annulus {
        center_m: [f64; 2],
        inner_radius_m: f64,
        outer_radius_m: f64,
        contrast: Complex64,
    },
    /// Covers the whole DOI; pixel intensity `p` maps to contrast `p * max_contrast`.
    Raster { image: GrayImage, max_contrast: Complex64 },
}

impl ShapeSpec {
    pub fn disk(center_m: [f64; 2], radius_m: f64, contrast: Complex64) -> Self {
        ShapeSpec::Disk {
            center_m,
            radius_m,
            contrast,
        }
    }

    pub fn annulus(center_m: [f64; 2], inner_radius_m: f64, outer_radius_m: f64, contrast: Complex64) -> Self {
        ShapeSpec::Annulus {
            center_m,
            inner_radius_m,
            outer_radius_m,
            contrast,
        }
    }

    pub fn validate(&self, doi_side_m: f64) -> Result<()> {
        let half = 0.5 * doi_side_m;
        let check_center = |c: &[f64; 2]| {
            if c.iter().any(|v| !v.is_finite() || v.abs() > half) {
                Err(Error::Scene(format!(
                    "shape centre ({}, {}) lies outside the {doi_side_m} m DOI",
                    c[0], c[1]
                )))
            } else {
                Ok(())
            }
        };
        match self {
            ShapeSpec::Disk {
                center_m,
                radius_m,
                contrast,
            } => {
                check_center(center_m)?;
                if !(*radius_m > 0.0) {
                    return Err(Error::Scene(format!("disk radius must be > 0, got {radius_m}")));
                }
                check_contrast(*contrast)
            }
            ShapeSpec::Annulus {
                center_m,
                inner_radius_m,
                outer_radius_m,
                contrast,
            } => {
                check_center(center_m)?;
                if !(*inner_radius_m > 0.0 && outer_radius_m > inner_radius_m) {
                    return Err(Error::Scene(format!(
                        "annulus needs 0 < inner < outer, got {inner_radius_m} / {outer_radius_m}"
                    )));
                }
                check_contrast(*contrast)
            }
            ShapeSpec::Raster { image, max_contrast } => {
                if image.pixels.is_empty() {
                    return Err(Error::Scene("raster image is empty".into()));
                }
                check_contrast(*max_contrast)
            }
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            ShapeSpec::Disk { center_m, radius_m, .. } => dist2(p, *center_m) <= radius_m * radius_m,
            ShapeSpec::Annulus {
                center_m,
                inner_radius_m,
                outer_radius_m,
                ..
            } => {
                let d2 = dist2(p, *center_m);
                d2 >= inner_radius_m * inner_radius_m && d2 <= outer_radius_m * outer_radius_m
            }
            ShapeSpec::Raster { .. } => false,
        }
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn check_contrast(c: Complex64) -> Result<()> {
    if !(c.re >= 0.0 && c.im >= 0.0 && c.re.is_finite() && c.im.is_finite()) {
        return Err(Error::Scene(format!("contrast parts must be finite and >= 0, got {c}")));
    }
    Ok(())
}

/// Complex contrast on an `M x M` grid, row-major in the [`Grid`] cell order.
/// Real and imaginary parts are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMap {
    grid: usize,
    values: Vec<Complex64>,
}

impl ContrastMap {
    pub fn new(grid: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid * grid {
            return Err(Error::shape("ContrastMap", grid * grid, values.len()));
        }
        if let Some(bad) = values
            .iter()
            .find(|z| !(z.re >= 0.0 && z.im >= 0.0 && z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::Scene(format!("contrast value {bad} violates nonnegativity")));
        }
        Ok(ContrastMap { grid, values })
    }

    pub fn zeros(grid: usize) -> Self {
        ContrastMap {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid * grid],
        }
    }

    pub fn constant(grid: usize, value: Complex64) -> Result<Self> {
        ContrastMap::new(grid, vec![value; grid * grid])
    }

    /// Applies the ReLU to both parts of every entry.
    pub fn clamped(grid: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid * grid {
            return Err(Error::shape("ContrastMap", grid * grid, values.len()));
        }
        Ok(ContrastMap {
            grid,
            values: values.into_iter().map(relu).collect(),
        })
    }

    /// Skips the nonnegativity check. For diagnostics of unconstrained
    /// iterations; the result may hold negative parts.
    pub fn unconstrained(grid: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid * grid {
            return Err(Error::shape("ContrastMap", grid * grid, values.len()));
        }
        Ok(ContrastMap { grid, values })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_lossy(&self) -> bool {
        self.values.iter().any(|z| z.im != 0.0)
    }

    /// `sum_n chi_n * S`.
    pub fn weighted_area(&self, doi_side_m: f64) -> Complex64 {
        let cell = Grid::new(doi_side_m, self.grid).cell_area();
        self.values.iter().sum::<Complex64>() * cell
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn relu(z: Complex64) -> Complex64 {
    Complex64::new(z.re.max(0.0), z.im.max(0.0))
}

/// Rasterizes `shapes` onto a `grid x grid` map of the configured DOI.
///
/// Each parametric shape contributes the fraction of its cell covered, estimated
/// from a 4x4 subsample lattice; where shapes overlap the later one wins.
/// Rasters are sampled nearest-neighbour at the cell centre and paint wherever
/// their intensity is nonzero.
pub fn rasterize(shapes: &[ShapeSpec], config: &SceneConfig, grid: usize) -> Result<ContrastMap> {
    if grid < 2 {
        return Err(Error::Scene(format!("grid must have at least 2 cells per side, got {grid}")));
    }
    for shape in shapes {
        shape.validate(config.doi_side_m)?;
    }
    let g = config.grid(grid);
    let h = g.step();
    let weight = 1.0 / (SUBSAMPLES * SUBSAMPLES) as f64;
    let mut values = vec![Complex64::new(0.0, 0.0); g.len()];
    for (n, value) in values.iter_mut().enumerate() {
        let (row, col) = (n / grid, n % grid);
        let [cx, cy] = g.center(n);
        let raster_values: Vec<Option<Complex64>> = shapes
            .iter()
            .map(|s| match s {
                ShapeSpec::Raster { image, max_contrast } => {
                    let u = (col as f64 + 0.5) / grid as f64;
                    let v = (row as f64 + 0.5) / grid as f64;
                    let p = image.sample(u, v);
                    (p > 0.0).then(|| max_contrast * p)
                }
                _ => None,
            })
            .collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for sy in 0..SUBSAMPLES {
            for sx in 0..SUBSAMPLES {
                let p = [
                    cx - 0.5 * h + (sx as f64 + 0.5) * h / SUBSAMPLES as f64,
                    cy + 0.5 * h - (sy as f64 + 0.5) * h / SUBSAMPLES as f64,
                ];
                let mut sample = Complex64::new(0.0, 0.0);
                for (shape, raster) in shapes.iter().zip(&raster_values) {
                    match (shape, raster) {
                        (ShapeSpec::Raster { .. }, Some(v)) => sample = *v,
                        (ShapeSpec::Raster { .. }, None) => {}
                        (ShapeSpec::Disk { contrast, .. }, _) | (ShapeSpec::Annulus { contrast, .. }, _) => {
                            if shape.contains(p) {
                                sample = *contrast;
                            }
                        }
                    }
                }
                acc += sample;
            }
        }
        *value = acc * weight;
    }
    ContrastMap::new(grid, values)
}

/// The "Austria" benchmark: two disks above a ring, scaled to the DOI side
/// (lengths below are for a 0.2 m DOI).
pub fn austria_profile(contrast: Complex64, config: &SceneConfig) -> Result<Vec<ShapeSpec>> {
    check_contrast(contrast)?;
    let s = config.doi_side_m / 0.2;
    Ok(vec![
        ShapeSpec::disk([-0.03 * s, 0.06 * s], 0.02 * s, contrast),
        ShapeSpec::disk([0.03 * s, 0.06 * s], 0.02 * s, contrast),
        ShapeSpec::annulus([0.0, -0.02 * s], 0.03 * s, 0.06 * s, contrast),
    ])
}

/// Ranges for random cylinder scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderSampler {
    pub count: (usize, usize),
    pub radius_m: (f64, f64),
    pub contrast_re: (f64, f64),
    pub contrast_im: (f64, f64),
}

impl Default for CylinderSampler {
    fn default() -> Self {
        CylinderSampler {
            count: (1, 3),
            radius_m: (0.01, 0.05),
            contrast_re: (0.2, 2.2),
            contrast_im: (0.0, 1.0),
        }
    }
}

impl CylinderSampler {
    /// Draws 1-3 disks fully inside the DOI. Pure function of `seed`.
    pub fn sample(&self, seed: u64, lossy: bool, doi_side_m: f64) -> Vec<ShapeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(self.count.0..=self.count.1);
        let half = 0.5 * doi_side_m;
        (0..n)
            .map(|_| {
                let r = rng.random_range(self.radius_m.0..=self.radius_m.1);
                let lim = (half - r).max(0.0);
                let cx = rng.random_range(-lim..=lim);
                let cy = rng.random_range(-lim..=lim);
                let re = rng.random_range(self.contrast_re.0..=self.contrast_re.1);
                let im = if lossy {
                    rng.random_range(self.contrast_im.0..=self.contrast_im.1)
                } else {
                    0.0
                };
                ShapeSpec::disk([cx, cy], r, Complex64::new(re, im))
            })
            .collect()
    }
}

pub fn sample_cylinder_scene(seed: u64, lossy: bool, config: &SceneConfig) -> Vec<ShapeSpec> {
    CylinderSampler::default().sample(seed, lossy, config.doi_side_m)
}

/// Replaces the contrast of every shape (the peak contrast for rasters).
pub fn with_contrast(shapes: &[ShapeSpec], value: Complex64) -> Result<Vec<ShapeSpec>> {
    check_contrast(value)?;
    Ok(shapes
        .iter()
        .cloned()
        .map(|s| match s {
            ShapeSpec::Disk { center_m, radius_m, .. } => ShapeSpec::disk(center_m, radius_m, value),
            ShapeSpec::Annulus {
                center_m,
                inner_radius_m,
                outer_radius_m,
                ..
            } => ShapeSpec::annulus(center_m, inner_radius_m, outer_radius_m, value),
            ShapeSpec::Raster { image, .. } => ShapeSpec::Raster { image, max_contrast: value },
        })
        .collect())
}

pub fn import_raster(image: GrayImage, max_contrast: Complex64) -> Result<ShapeSpec> {
    if image.width == 0 || image.height == 0 || image.pixels.is_empty() {
        return Err(Error::Scene("raster image is empty".into()));
    }
    check_contrast(max_contrast)?;
    Ok(ShapeSpec::Raster { image, max_contrast })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    shapes: Vec<ShapeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ShapeEntry {
    Disk {
        center_m: [f64; 2],
        radius_m: f64,
        contrast: [f64; 2],
    },
    Annulus {
        center_m: [f64; 2],
        inner_radius_m: f64,
        outer_radius_m: f64,
        contrast: [f64; 2],
    },
    Raster {
        path: PathBuf,
        max_contrast: [f64; 2],
    },
}

fn cpx(v: [f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

/// Parses a scene document; raster paths resolve relative to `base_dir`.
pub fn parse_scene(json: &str, base_dir: &Path) -> Result<Vec<ShapeSpec>> {
    let file: SceneFile = serde_json::from_str(json)?;
    file.shapes
        .into_iter()
        .map(|entry| match entry {
            ShapeEntry::Disk {
                center_m,
                radius_m,
                contrast,
            } => Ok(ShapeSpec::disk(center_m, radius_m, cpx(contrast))),
            ShapeEntry::Annulus {
                center_m,
                inner_radius_m,
                outer_radius_m,
                contrast,
            } => Ok(ShapeSpec::annulus(center_m, inner_radius_m, outer_radius_m, cpx(contrast))),
            ShapeEntry::Raster { path, max_contrast } => {
                let image = io::read_pgm(&base_dir.join(path))?;
                import_raster(image, cpx(max_contrast))
            }
        })
        .collect()
}

pub fn load_scene(path: &Path) -> Result<Vec<ShapeSpec>> {
    let json = std::fs::read_to_string(path)?;
    parse_scene(&json, path.parent().unwrap_or(Path::new(".")))
}

/// Writes a scene document. Raster payloads go to sibling PGM files named
/// after the scene file.
pub fn save_scene(shapes: &[ShapeSpec], path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    let mut entries = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.iter().enumerate() {
        entries.push(match shape {
            ShapeSpec::Disk {
                center_m,
                radius_m,
                contrast,
            } => ShapeEntry::Disk {
                center_m: *center_m,
                radius_m: *radius_m,
                contrast: [contrast.re, contrast.im],
            },
            ShapeSpec::Annulus {
                center_m,
                inner_radius_m,
                outer_radius_m,
                contrast,
            } => ShapeEntry::Annulus {
                center_m: *center_m,
                inner_radius_m: *inner_radius_m,
                outer_radius_m: *outer_radius_m,
                contrast: [contrast.re, contrast.im],
            },
            ShapeSpec::Raster { image, max_contrast } => {
                let name = format!("{stem}_raster{i}.pgm");
                io::write_pgm_image(&dir.join(&name), image)?;
                ShapeEntry::Raster {
                    path: name.into(),
                    max_contrast: [max_contrast.re, max_contrast.im],
                }
            }
        });
    }
    let json = serde_json::to_string_pretty(&SceneFile { shapes: entries })?;
    std::fs::write(path, json)?;
    Ok(())
}
