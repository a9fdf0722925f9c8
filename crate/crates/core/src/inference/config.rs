//! Inference settings and observation models.

use std::collections::BTreeMap;

use super::InferenceError;
use crate::rng::NormalRng;
use crate::spectral::{decompose, recompose, ScalePartition, ScaleSpectrum, SpectralError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One encoder pass, no refinement.
    Amortized,
    /// Latents sampled from the prior, then refined.
    Iterative,
    /// Latents sampled from the posterior, then refined.
    Hybrid,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Amortized => "amortized",
            Mode::Iterative => "iterative",
            Mode::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "amortized" => Some(Mode::Amortized),
            "iterative" => Some(Mode::Iterative),
            "hybrid" => Some(Mode::Hybrid),
            _ => None,
        }
    }
}

/// The reconstruction loss `𝓛` on the scale's real degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconLoss {
    /// `Σ |ĥ − h|`.
    L1,
    /// `Σ (ĥ − h)²`.
    L2,
}

impl ReconLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconLoss::L1 => "l1",
            ReconLoss::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l1" => Some(ReconLoss::L1),
            "l2" => Some(ReconLoss::L2),
            _ => None,
        }
    }

    pub fn eval(self, predicted: &[f64], target: &[f64]) -> f64 {
        let d = predicted.iter().zip(target).map(|(p, t)| p - t);
        match self {
            ReconLoss::L1 => d.map(f64::abs).sum(),
            ReconLoss::L2 => d.map(|v| v * v).sum(),
        }
    }
}

/// What is known about the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Observation {
    Full,
    /// Only the bins of scales `0..=cutoff_scale` are measured.
    FrequencyMask {
        cutoff_scale: usize,
    },
    /// The image plus `N(0, sigma²)` pixel noise.
    Noisy {
        sigma: f64,
    },
}

impl Observation {
    /// Checks the observation against the partition.
    pub fn validate(&self, partition: &ScalePartition) -> Result<(), InferenceError> {
        match *self {
            Observation::FrequencyMask { cutoff_scale }
                if cutoff_scale >= partition.num_scales() =>
            {
                Err(InferenceError::Config(format!(
                    "cutoff scale {cutoff_scale} exceeds the finest scale {}",
                    partition.num_scales() - 1
                )))
            }
            Observation::Noisy { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => Err(
                InferenceError::Config(format!("noise level {sigma} must be non-negative")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether scale `s` is measured and therefore refined with guidance.
    pub fn guides(&self, s: usize) -> bool {
        match *self {
            Observation::FrequencyMask { cutoff_scale } => s <= cutoff_scale,
            _ => true,
        }
    }

    /// Simulates the measurement of a clean image.
    pub fn observe(
        &self,
        x: &Tensor,
        partition: &ScalePartition,
        rng: &mut NormalRng,
    ) -> Result<Tensor, SpectralError> {
        match *self {
            Observation::Full => Ok(x.clone()),
            Observation::FrequencyMask { cutoff_scale } => {
                let spectra: Vec<ScaleSpectrum> = decompose(x, partition)?
                    .into_iter()
                    .map(|s| {
                        if s.scale <= cutoff_scale {
                            s
                        } else {
                            ScaleSpectrum::zeros(partition, s.scale)
                        }
                    })
                    .collect();
                recompose(&spectra, partition)
            }
            Observation::Noisy { sigma } => {
                let noise = rng.normal_tensor(x.shape());
                Ok(x.zip_with(&noise, |a, n| a + sigma * n)?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub mode: Mode,
    /// Refinement iterations `N` per layer.
    pub iterations: usize,
    /// Step size `λ`.
    pub step_size: f64,
    /// Guidance strength `β`.
    pub beta: f64,
    /// Per-layer `β` overrides.
    pub beta_overrides: BTreeMap<usize, f64>,
    pub loss: ReconLoss,
    pub observation: Observation,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Hybrid,
            iterations: 25,
            step_size: 1e-3,
            beta: 1.0,
            beta_overrides: BTreeMap::new(),
            loss: ReconLoss::L1,
            observation: Observation::Full,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn new(mode: Mode, iterations: usize) -> Self {
        Self {
            mode,
            iterations: if mode == Mode::Amortized {
                0
            } else {
                iterations
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(InferenceError::Config(format!(
                "step size {} must be non-negative",
                self.step_size
            )));
        }
        let betas = std::iter::once(&self.beta).chain(self.beta_overrides.values());
        for &b in betas {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(InferenceError::Config(format!(
                    "beta {b} must be non-negative"
                )));
            }
        }
        if self.mode == Mode::Amortized && self.iterations != 0 {
            return Err(InferenceError::Config(
                "amortized inference takes no refinement iterations".into(),
            ));
        }
        Ok(())
    }

    pub fn beta_for(&self, layer: usize) -> f64 {
        self.beta_overrides
            .get(&layer)
            .copied()
            .unwrap_or(self.beta)
    }
}
