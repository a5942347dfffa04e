//! Deterministic synthetic test images.

use super::ExperimentError;
use crate::tensor::{write_image, Image, RngSeed, Shape};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// A square single-channel texture with values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SyntheticImage {
    /// `(i + j) / (2 size − 2)`.
    Gradient { size: usize },
    /// 0 on the cell containing the origin, alternating with 1.
    Checkerboard { size: usize, cell: usize },
    /// Random cosines at DFT frequencies of radius at most `cutoff`,
    /// rescaled to `[0, 1]`.
    Bandlimited { size: usize, cutoff: f64 },
    /// Smooth ramp and ripple plus a faint checkerboard of the given cell.
    Mixed { size: usize, cell: usize },
}

impl SyntheticImage {
    pub fn size(&self) -> usize {
        match *self {
            SyntheticImage::Gradient { size }
            | SyntheticImage::Checkerboard { size, .. }
            | SyntheticImage::Bandlimited { size, .. }
            | SyntheticImage::Mixed { size, .. } => size,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SyntheticImage::Gradient { .. } => "gradient",
            SyntheticImage::Checkerboard { .. } => "checkerboard",
            SyntheticImage::Bandlimited { .. } => "bandlimited",
            SyntheticImage::Mixed { .. } => "mixed",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.size() < 2 {
            return Err(format!("{} image needs size >= 2", self.kind_name()));
        }
        match *self {
            SyntheticImage::Checkerboard { cell, .. } | SyntheticImage::Mixed { cell, .. } if cell == 0 => {
                Err("cell must be at least 1".into())
            }
            SyntheticImage::Bandlimited { cutoff, .. } if !(cutoff >= 1.0) => {
                Err(format!("cutoff must be at least 1, got {cutoff}"))
            }
            _ => Ok(()),
        }
    }

    pub fn render(&self, seed: RngSeed) -> Image {
        let n = self.size();
        let shape = Shape::gray(n, n);
        match *self {
            SyntheticImage::Gradient { .. } => {
                let denom = (2 * n - 2) as f64;
                Image::from_fn(shape, |_, i, j| (i + j) as f64 / denom)
            }
            SyntheticImage::Checkerboard { cell, .. } => {
                Image::from_fn(shape, |_, i, j| ((i / cell + j / cell) % 2) as f64)
            }
            SyntheticImage::Mixed { cell, .. } => {
                let last = (n - 1) as f64;
                Image::from_fn(shape, |_, i, j| {
                    let (x, y) = (i as f64 / last, j as f64 / last);
                    let base = 0.2 + 0.5 * x * y + 0.2 * (6.0 * x).sin() * (5.0 * y).cos();
                    if (i / cell + j / cell) % 2 == 0 {
                        base + 0.15
                    } else {
                        base
                    }
                })
            }
            SyntheticImage::Bandlimited { cutoff, .. } => bandlimited(n, cutoff, seed),
        }
    }
}

/// Signed frequency of DFT bin `u` on a length-`n` axis.
pub fn wrapped_frequency(u: usize, n: usize) -> f64 {
    if 2 * u <= n {
        u as f64
    } else {
        u as f64 - n as f64
    }
}

fn bandlimited(n: usize, cutoff: f64, seed: RngSeed) -> Image {
    let mut rng = seed.rng();
    let mut data = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for u in 0..n {
        for v in 0..n {
            let (fu, fv) = (wrapped_frequency(u, n), wrapped_frequency(v, n));
            let radius = (fu * fu + fv * fv).sqrt();
            if radius == 0.0 || radius > cutoff {
                continue;
            }
            let amp: f64 = rng.random_range(0.0..1.0);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            let (wu, wv) = (2.0 * PI * u as f64 / n as f64, 2.0 * PI * v as f64 / n as f64);
            for (j, r) in row.iter_mut().enumerate() {
                *r = wv * j as f64 + phase;
            }
            for i in 0..n {
                let base = wu * i as f64;
                for j in 0..n {
                    data[i * n + j] += amp * (base + row[j]).cos();
                }
            }
        }
    }
    // rescaling only moves the DC bin, so the band limit survives
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in &mut data {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        data.fill(0.5);
    }
    Image::new(Shape::gray(n, n), data).expect("length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Png,
    Pgm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Pgm => "pgm",
        }
    }
}

/// A corpus description: every entry is rendered with its own derived seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub format: ImageFormat,
    #[serde(rename = "image")]
    pub images: Vec<SyntheticImage>,
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let spec: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        if spec.images.is_empty() {
            return Err("synth spec lists no images".into());
        }
        for img in &spec.images {
            img.validate()?;
        }
        Ok(spec)
    }

    /// File name of entry `index`, e.g. `03-checkerboard-32.png`.
    pub fn file_name(&self, index: usize) -> String {
        let img = &self.images[index];
        format!("{index:02}-{}-{}.{}", img.kind_name(), img.size(), self.format.extension())
    }

    /// Renders and writes every entry below `root.join(out_dir)`.
    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        let dir = root.join(&self.out_dir);
        std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        let mut written = Vec::with_capacity(self.images.len());
        for (i, img) in self.images.iter().enumerate() {
            let path = dir.join(self.file_name(i));
            write_image(&img.render(RngSeed(self.seed).derive(i as u64)), &path)
                .map_err(|e| ExperimentError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}
