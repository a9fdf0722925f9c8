//! Iterative amortized hierarchical VAE with a frequency-separable decoder.

pub mod autodiff;
pub mod experiments;
pub mod inference;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod training;
