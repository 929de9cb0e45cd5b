//! Synthetic scenes with known class structure.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruth, HsiCube};
use crate::error::{Error, Result};

/// Spectral scene: each class has a smooth mean spectrum, and bands come in
/// groups of `redundancy` that share one noisy anchor value per pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub redundancy: usize,
    /// Standard deviation of the per-pixel anchor noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            bands: 20,
            rows: 16,
            cols: 16,
            redundancy: 4,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Within-group jitter relative to the anchor noise.
const BAND_JITTER: f64 = 0.1;

fn check_noise(noise: f64) -> Result<Normal<f64>> {
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::Argument(format!("noise must be a non-negative number, got {noise}")));
    }
    Ok(Normal::new(0.0, 1.0).expect("unit normal"))
}

/// Low-frequency curve in roughly `[0.1, 0.9]` sampled at `bands` points.
fn smooth_curve<R: Rng>(bands: usize, rng: &mut R) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64)> = (1..=3)
        .map(|f| (f as f64, rng.random_range(0.0..0.15), rng.random_range(0.0..TAU)))
        .collect();
    let offset = rng.random_range(0.35..0.65);
    (0..bands)
        .map(|b| {
            let t = b as f64 / bands as f64;
            offset + terms.iter().map(|&(f, a, p)| a * (TAU * f * t + p).sin()).sum::<f64>()
        })
        .collect()
}

/// Class of column `col` when `cols` columns are split into `classes`
/// near-equal vertical blocks; 1-based.
fn column_block(col: usize, cols: usize, classes: usize) -> u16 {
    (col * classes / cols) as u16 + 1
}

pub fn synth_hsi(spec: &SynthSpec) -> Result<(HsiCube, GroundTruth)> {
    let SynthSpec {
        classes,
        bands,
        rows,
        cols,
        redundancy,
        noise,
        seed,
    } = *spec;
    if classes < 2 || bands < classes {
        return Err(Error::Argument(format!(
            "need at least 2 classes and as many bands as classes, got C={classes}, k={bands}"
        )));
    }
    if cols < classes || rows == 0 {
        return Err(Error::Argument(format!(
            "a {rows}×{cols} image cannot hold {classes} column blocks"
        )));
    }
    if redundancy == 0 {
        return Err(Error::Argument("redundancy must be at least 1".into()));
    }
    let unit = check_noise(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes).map(|_| smooth_curve(bands, &mut rng)).collect();
    let groups = bands.div_ceil(redundancy);

    let mut labels = Vec::with_capacity(rows * cols);
    let mut values = Vec::with_capacity(rows * cols * bands);
    let mut anchor = vec![0.0; groups];
    for _ in 0..rows {
        for col in 0..cols {
            let class = column_block(col, cols, classes);
            labels.push(class);
            let mean = &means[class as usize - 1];
            for a in anchor.iter_mut() {
                *a = noise * unit.sample(&mut rng);
            }
            for b in 0..bands {
                let g = b / redundancy;
                let jitter = noise * BAND_JITTER * unit.sample(&mut rng);
                values.push(mean[g * redundancy] + anchor[g] + jitter);
            }
        }
    }
    Ok((HsiCube::new(rows, cols, bands, values)?, GroundTruth::new(rows, cols, labels)?))
}

/// Texture scene: every class shares one mean spectrum and differs only in
/// its spatial pattern. Pixels closer than `margin` to a block edge are left
/// unlabeled so that a centered patch of side `2·margin + 1` sees one texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialSynthSpec {
    pub classes: usize,
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub margin: usize,
    /// Texture contrast.
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SpatialSynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            bands: 6,
            rows: 24,
            cols: 48,
            margin: 4,
            amplitude: 0.25,
            noise: 0.02,
            seed: 0,
        }
    }
}

/// Pattern of class `c` (0-based) at `(r, c)`, in `{−1, 0, 1}`.
pub fn texture(class: usize, row: usize, col: usize) -> f64 {
    let sign = |v: usize| if v.is_multiple_of(2) { 1.0 } else { -1.0 };
    match class % 6 {
        0 => sign(row),
        1 => sign(col),
        2 => sign(row + col),
        3 => 0.0,
        4 => sign(row / 2),
        _ => sign(col / 2),
    }
}

pub fn synth_spatial(spec: &SpatialSynthSpec) -> Result<(HsiCube, GroundTruth)> {
    let SpatialSynthSpec {
        classes,
        bands,
        rows,
        cols,
        margin,
        amplitude,
        noise,
        seed,
    } = *spec;
    if classes < 2 || bands == 0 {
        return Err(Error::Argument(format!("need at least 2 classes and 1 band, got C={classes}, k={bands}")));
    }
    let block = cols / classes;
    if rows == 0 || block <= 2 * margin {
        return Err(Error::Argument(format!(
            "a {rows}×{cols} image leaves no labeled pixels for {classes} blocks with margin {margin}"
        )));
    }
    let unit = check_noise(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = smooth_curve(bands, &mut rng);
    let gain: Vec<f64> = (0..bands).map(|_| rng.random_range(0.6..1.0)).collect();

    let mut labels = Vec::with_capacity(rows * cols);
    let mut values = Vec::with_capacity(rows * cols * bands);
    for r in 0..rows {
        for c in 0..cols {
            let class = (c / block).min(classes - 1);
            let start = class * block;
            let end = if class + 1 == classes { cols } else { start + block };
            let inside = c >= start + margin && c + margin < end;
            labels.push(if inside { class as u16 + 1 } else { 0 });
            let t = texture(class, r, c);
            for b in 0..bands {
                values.push(mean[b] + amplitude * gain[b] * t + noise * unit.sample(&mut rng));
            }
        }
    }
    Ok((HsiCube::new(rows, cols, bands, values)?, GroundTruth::new(rows, cols, labels)?))
}
