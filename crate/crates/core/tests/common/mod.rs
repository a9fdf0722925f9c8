#![allow(dead_code)]

use iahvae::model::{Hierarchy, InitScheme, ModelConfig};
use iahvae::rng::NormalRng;
use iahvae::tensor::Tensor;

/// A small randomly initialized model (non-zero final layers).
pub fn random_model(resolution: usize, layers: usize, seed: u64) -> Hierarchy {
    let mut config = ModelConfig::uniform(resolution, layers);
    config.width_factor = 1.0 / 16.0;
    config.init = InitScheme::Random;
    config.seed = seed;
    Hierarchy::new(config).unwrap()
}

pub fn random_image(n: usize, seed: u64) -> Tensor {
    NormalRng::new(seed, 99).normal_tensor(&[n, n])
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}
