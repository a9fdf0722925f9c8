//! Deterministic synthetic image sets.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::rng::NormalRng;
use crate::spectral::idft2;
use crate::spectral::{Fft2, Spectrum};
use crate::tensor::Tensor;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// Gaussian-process textures with a decaying power spectrum.
    GpTexture,
    /// Sums of random constant-intensity ellipses with sharp edges.
    EllipsePhantom,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::GpTexture => "gp-texture",
            DatasetKind::EllipsePhantom => "ellipse-phantom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gp-texture" => Some(DatasetKind::GpTexture),
            "ellipse-phantom" => Some(DatasetKind::EllipsePhantom),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub resolution: usize,
    pub count: usize,
    pub seed: u64,
}

/// Per-pixel affine normalization `(x − mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Pooled mean and standard deviation over all pixels of `images`.
    pub fn fit(images: &[Tensor]) -> Self {
        let n: usize = images.iter().map(Tensor::len).sum();
        let mean = images.iter().map(Tensor::sum).sum::<f64>() / n as f64;
        let var = images
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        Self {
            mean,
            std: var.sqrt().max(f64::MIN_POSITIVE),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        x.map(|v| v * self.std + self.mean)
    }
}

/// Normalized train and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Tensor>,
    pub test: Vec<Tensor>,
    /// Statistics of the raw train split.
    pub normalization: Normalization,
}

impl Dataset {
    /// Generates `spec.count` training images and `test_count` held-out
    /// images from disjoint per-image streams; normalizes both with the
    /// train statistics.
    pub fn generate(spec: &DatasetSpec, test_count: usize) -> Result<Self, TrainError> {
        let raw = generate_synthetic(&DatasetSpec {
            count: spec.count + test_count,
            ..spec.clone()
        })?;
        let (train, test) = raw.split_at(spec.count);
        let normalization = Normalization::fit(train);
        Ok(Self {
            train: train.iter().map(|x| normalization.apply(x)).collect(),
            test: test.iter().map(|x| normalization.apply(x)).collect(),
            normalization,
        })
    }
}

/// Raw (unnormalized) images; image `i` depends only on `(spec, i)`.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Vec<Tensor>, TrainError> {
    let n = spec.resolution;
    if n < 2 || !n.is_power_of_two() {
        return Err(TrainError::Config(format!(
            "resolution {n} must be a power of two ≥ 2"
        )));
    }
    let fft = Fft2::new(n, n).map_err(crate::model::ModelError::from)?;
    (0..spec.count)
        .map(|i| {
            let mut rng = NormalRng::tagged(spec.seed, &[spec.kind as u64, i as u64]);
            match spec.kind {
                DatasetKind::GpTexture => gp_texture(n, &fft, &mut rng),
                DatasetKind::EllipsePhantom => Ok(ellipse_phantom(n, &mut rng)),
            }
        })
        .collect()
}

/// Spectral amplitude `1 / (1 + |f|² / f0²)` with `f0 = n / 8` cycles.
pub fn gp_amplitude(u: usize, v: usize, n: usize) -> f64 {
    let c = |k: usize| {
        if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    let f0 = (n as f64 / 8.0).max(1.0);
    1.0 / (1.0 + (c(u).powi(2) + c(v).powi(2)) / (f0 * f0))
}

fn gp_texture(n: usize, fft: &Fft2, rng: &mut NormalRng) -> Result<Tensor, TrainError> {
    let mut buf: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(rng.standard_normal(), 0.0))
        .collect();
    fft.forward(&mut buf);
    for u in 0..n {
        for v in 0..n {
            buf[u * n + v] *= gp_amplitude(u, v, n);
        }
    }
    let spectrum = Spectrum {
        height: n,
        width: n,
        data: buf,
    };
    idft2(&spectrum).map_err(|e| TrainError::Model(e.into()))
}

fn ellipse_phantom(n: usize, rng: &mut NormalRng) -> Tensor {
    let count = 3 + rng.below(4);
    let ellipses: Vec<[f64; 6]> = (0..count)
        .map(|_| {
            [
                rng.uniform() * 1.2 - 0.6,
                rng.uniform() * 1.2 - 0.6,
                0.1 + 0.4 * rng.uniform(),
                0.1 + 0.4 * rng.uniform(),
                rng.uniform() * PI,
                rng.uniform() * 2.0 - 1.0,
            ]
        })
        .collect();
    Tensor::from_fn(&[n, n], |i| {
        let y = ((i / n) as f64 + 0.5) / n as f64 * 2.0 - 1.0;
        let x = ((i % n) as f64 + 0.5) / n as f64 * 2.0 - 1.0;
        ellipses
            .iter()
            .filter(|&&[cx, cy, a, b, t, _]| {
                let (dx, dy) = (x - cx, y - cy);
                let (s, c) = t.sin_cos();
                let (px, py) = (c * dx + s * dy, -s * dx + c * dy);
                (px / a).powi(2) + (py / b).powi(2) <= 1.0
            })
            .map(|e| e[5])
            .sum()
    })
}
