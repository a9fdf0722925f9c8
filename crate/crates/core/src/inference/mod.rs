//! Amortized, iterative and hybrid posterior inference, plus the full-path
//! gradient baseline.
//!
//! Refinement descends `J(z_l) = −log N(z_l; μ_p, σ_p) + β 𝓛(h^s, ĥ^s)` where
//! `h^s` are the observed coefficients of the layer's scale and `ĥ^s` are
//! predicted by completing the scale from `z_l` through the remaining members
//! of its subset. Coefficients are in the units of the unnormalized DFT.

mod config;
mod refine;
mod run;
mod sweep;

pub use config::{InferenceConfig, Mode, Observation, ReconLoss};
pub use refine::{
    complete_scale, refine_layer, refinement_objective, subset_gradient, vanilla_gradient,
    LayerState, StepEval,
};
pub use run::{infer, InferenceResult, InferenceTrace, TraceRow};
pub use sweep::{snapshot_sweep, LayerSnapshot};

use thiserror::Error;

use crate::model::ModelError;
use crate::spectral::SpectralError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid inference config: {0}")]
    Config(String),
    #[error("non-finite refinement gradient at layer {layer}, iteration {iteration}")]
    NonFinite { layer: usize, iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TensorError> for InferenceError {
    fn from(e: TensorError) -> Self {
        InferenceError::Model(e.into())
    }
}

impl From<SpectralError> for InferenceError {
    fn from(e: SpectralError) -> Self {
        InferenceError::Model(e.into())
    }
}
