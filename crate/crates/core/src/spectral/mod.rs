//! The linear operator `B` (2D DFT), half-spectrum packing with hermitian
//! completion, and the partition of frequency bins into dyadic scales.

mod fft;
mod half;
mod maps;
mod partition;
mod scales;

pub use fft::{dft2, idft2, is_power_of_two, Fft, Fft2, Spectrum, REAL_TOLERANCE};
pub use half::{hermitian_complete, HalfSpectrum, SELF_CONJUGATE_TOLERANCE};
pub use maps::{AnalysisMap, ScaleHeadMap, SynthesisMap};
pub use partition::{Bin, ScalePartition};
pub use scales::{
    decompose, decompose_dofs, embed_scale, recompose, recompose_scale, ScaleSpectrum,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("image must be square, got {height}x{width}")]
    NotSquare { height: usize, width: usize },
    #[error("expected a rank-2 image, got shape {0:?}")]
    NotAnImage(Vec<usize>),
    #[error(
        "spectrum is not hermitian: imaginary residue {max_imag:e} vs real scale {max_real:e}"
    )]
    NotHermitian { max_imag: f64, max_real: f64 },
    #[error("self-conjugate bin ({u}, {v}) has imaginary part {imag:e}")]
    ImaginarySelfConjugate { u: usize, v: usize, imag: f64 },
    #[error("image shape {shape:?} does not match partition size {expected}")]
    DimMismatch { expected: usize, shape: Vec<usize> },
    #[error("scale {scale}: expected {expected} coefficients, got {actual}")]
    ScaleLength {
        scale: usize,
        expected: usize,
        actual: usize,
    },
    #[error("scale {0} missing from spectra")]
    MissingScale(usize),
    #[error("scale {0} supplied more than once or out of range")]
    OverlappingScale(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
