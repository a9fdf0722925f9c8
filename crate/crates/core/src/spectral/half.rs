//! Half-spectrum storage and hermitian completion.

use num_complex::Complex64;

use super::fft::Spectrum;
use super::SpectralError;

/// Tolerance on the imaginary part of self-conjugate bins, relative to the
/// largest coefficient magnitude.
pub const SELF_CONJUGATE_TOLERANCE: f64 = 1e-9;

/// Non-redundant half of a real image's spectrum: all rows `u`, columns
/// `v ∈ [0, W/2]`, stored row-major.
///
/// In the columns `v = 0` and `v = W/2` only rows `u <= H/2` are free; the
/// rows below are derived from their conjugates on completion.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpectrum {
    pub height: usize,
    pub width: usize,
    data: Vec<Complex64>,
}

impl HalfSpectrum {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::default(); height * (width / 2 + 1)],
        }
    }

    pub fn cols(&self) -> usize {
        self.width / 2 + 1
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.cols() + v]
    }

    pub fn set(&mut self, u: usize, v: usize, value: Complex64) {
        let c = self.cols();
        self.data[u * c + v] = value;
    }

    pub fn from_full(full: &Spectrum) -> Self {
        let mut half = Self::zeros(full.height, full.width);
        for u in 0..full.height {
            for v in 0..half.cols() {
                half.set(u, v, full.get(u, v));
            }
        }
        half
    }

    fn self_conjugate_bins(&self) -> impl Iterator<Item = (usize, usize)> {
        let (hh, hw) = (self.height / 2, self.width / 2);
        let rows = if hh == 0 { vec![0] } else { vec![0, hh] };
        let cols = if hw == 0 { vec![0] } else { vec![0, hw] };
        rows.into_iter()
            .flat_map(move |u| cols.clone().into_iter().map(move |v| (u, v)))
    }

    /// Checks that self-conjugate bins are real within tolerance.
    pub fn validate(&self) -> Result<(), SpectralError> {
        let scale = self.data.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        for (u, v) in self.self_conjugate_bins() {
            let im = self.get(u, v).im;
            if im.abs() > SELF_CONJUGATE_TOLERANCE * scale {
                return Err(SpectralError::ImaginarySelfConjugate { u, v, imag: im });
            }
        }
        Ok(())
    }
}

/// Fills the missing half with `X[(H-u)%H, (W-v)%W] = conj(X[u, v])`.
///
/// Self-conjugate bins are forced real (after validation) and the redundant
/// rows `u > H/2` of the edge columns are taken from their conjugates, so the
/// result is exactly hermitian.
pub fn hermitian_complete(half: &HalfSpectrum) -> Result<Spectrum, SpectralError> {
    half.validate()?;
    let (h, w) = (half.height, half.width);
    let hw = w / 2;
    let mut full = Spectrum::zeros(h, w);
    for u in 0..h {
        for v in 0..=hw {
            let edge = v == 0 || v == hw;
            if edge && u > h / 2 {
                continue;
            }
            let mut x = half.get(u, v);
            let (cu, cv) = ((h - u) % h, (w - v) % w);
            if (cu, cv) == (u, v) {
                x.im = 0.0;
            }
            full.set(u, v, x);
            full.set(cu, cv, x.conj());
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fft::{dft2, idft2};
    use crate::tensor::Tensor;

    #[test]
    fn dc_only_half_gives_constant_image() {
        let mut half = HalfSpectrum::zeros(4, 4);
        half.set(0, 0, Complex64::new(32.0, 0.0));
        let img = idft2(&hermitian_complete(&half).unwrap()).unwrap();
        for &x in img.data() {
            assert!((x - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn completion_of_real_image_half_recovers_full_spectrum() {
        let img = Tensor::from_fn(&[8, 8], |i| ((i * 37 % 11) as f64 - 5.0) * 0.3);
        let full = dft2(&img).unwrap();
        let completed = hermitian_complete(&HalfSpectrum::from_full(&full)).unwrap();
        for (a, b) in full.data.iter().zip(&completed.data) {
            assert!((a - b).norm() < 1e-10);
        }
        assert_eq!(completed.hermitian_defect(), 0.0);
    }

    #[test]
    fn imaginary_self_conjugate_bin_rejected() {
        let mut half = HalfSpectrum::zeros(4, 4);
        half.set(2, 2, Complex64::new(1.0, 0.5));
        assert!(matches!(
            hermitian_complete(&half),
            Err(SpectralError::ImaginarySelfConjugate { u: 2, v: 2, .. })
        ));
    }
}
