//! The hierarchical generative and inference networks.
//!
//! Layers are grouped by scale. Within a scale every layer refines a shared
//! context tensor of shape `[4^s, C]` (one row per position of the `2^s × 2^s`
//! grid). After the last layer of scale `s` a head maps the context to the
//! scale's spectral coefficients, and the context is upsampled to seed the
//! next scale. The image is the sum of the per-scale spectra, so the
//! coefficients of scale `s` depend on the layers of scale `s` only through
//! the remaining members of that scale.

mod config;
mod elbo;
mod gaussian;
mod hierarchy;
mod nn;
mod params;

pub use config::{parse_layers, InitScheme, ModelConfig};
pub use elbo::{elbo, image_loss_on, ElboTerms, LossParts};
pub use gaussian::{
    gaussian_sample, kl_gaussian, kl_var, nll_var, GaussianParams, HALF_LN_TAU, LOG_SIGMA_MAX,
    LOG_SIGMA_MIN,
};
pub use hierarchy::{Decoded, EvalCounts, Hierarchy, LayerSpec, Visit};
pub use nn::{Affine, ResBlock};
pub use params::{Binder, ParamId, ParamSet};

use thiserror::Error;

use crate::spectral::SpectralError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("layer {0} out of range")]
    NoSuchLayer(usize),
    #[error("{what}: expected shape {expected:?}, got {actual:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}
