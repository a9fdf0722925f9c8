//! Per-scale spectra: splitting an image into the scale set `H` and
//! summing it back.

use num_complex::Complex64;

use super::fft::{dft2, idft2};
use super::half::{hermitian_complete, HalfSpectrum};
use super::partition::ScalePartition;
use super::SpectralError;
use crate::tensor::Tensor;

/// Coefficients of the canonical bins generated by one scale, aligned with
/// [`ScalePartition::canonical_bins`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSpectrum {
    pub scale: usize,
    pub coeffs: Vec<Complex64>,
}

impl ScaleSpectrum {
    pub fn zeros(partition: &ScalePartition, scale: usize) -> Self {
        Self {
            scale,
            coeffs: vec![Complex64::default(); partition.canonical_bins(scale).len()],
        }
    }

    /// Flattens into real degrees of freedom: `re` for self-conjugate bins,
    /// `re, im` otherwise.
    pub fn to_dofs(&self, partition: &ScalePartition) -> Vec<f64> {
        let mut out = Vec::with_capacity(partition.dof_len(self.scale));
        for (&bin, c) in partition
            .canonical_bins(self.scale)
            .iter()
            .zip(&self.coeffs)
        {
            out.push(c.re);
            if !partition.is_self_conjugate(bin) {
                out.push(c.im);
            }
        }
        out
    }

    pub fn from_dofs(
        partition: &ScalePartition,
        scale: usize,
        dofs: &[f64],
    ) -> Result<Self, SpectralError> {
        if scale >= partition.num_scales() || dofs.len() != partition.dof_len(scale) {
            return Err(SpectralError::ScaleLength {
                scale,
                expected: partition.dof_len(scale.min(partition.num_scales() - 1)),
                actual: dofs.len(),
            });
        }
        let mut coeffs = Vec::with_capacity(partition.canonical_bins(scale).len());
        let mut it = dofs.iter();
        for &bin in partition.canonical_bins(scale) {
            let re = *it.next().expect("length checked");
            let im = if partition.is_self_conjugate(bin) {
                0.0
            } else {
                *it.next().expect("length checked")
            };
            coeffs.push(Complex64::new(re, im));
        }
        Ok(Self { scale, coeffs })
    }

    pub fn l1_norm(&self, partition: &ScalePartition) -> f64 {
        self.to_dofs(partition).iter().map(|v| v.abs()).sum()
    }
}

fn check_image(x: &Tensor, partition: &ScalePartition) -> Result<(), SpectralError> {
    let n = partition.size();
    if x.shape() != [n, n] {
        return Err(SpectralError::DimMismatch {
            expected: n,
            shape: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// `B⁻¹x`: forward DFT, then one [`ScaleSpectrum`] per scale.
pub fn decompose(
    x: &Tensor,
    partition: &ScalePartition,
) -> Result<Vec<ScaleSpectrum>, SpectralError> {
    check_image(x, partition)?;
    let full = dft2(x)?;
    Ok((0..partition.num_scales())
        .map(|k| {
            let coeffs = partition
                .canonical_bins(k)
                .iter()
                .map(|&b| {
                    let mut c = full.get(b.u, b.v);
                    if partition.is_self_conjugate(b) {
                        c.im = 0.0;
                    }
                    c
                })
                .collect();
            ScaleSpectrum { scale: k, coeffs }
        })
        .collect())
}

/// [`decompose`] flattened to per-scale degree-of-freedom vectors.
pub fn decompose_dofs(
    x: &Tensor,
    partition: &ScalePartition,
) -> Result<Vec<Vec<f64>>, SpectralError> {
    Ok(decompose(x, partition)?
        .iter()
        .map(|s| s.to_dofs(partition))
        .collect())
}

/// Writes one scale's coefficients into their canonical half-spectrum bins.
pub fn embed_scale(
    half: &mut HalfSpectrum,
    spectrum: &ScaleSpectrum,
    partition: &ScalePartition,
) -> Result<(), SpectralError> {
    let bins = partition.canonical_bins(spectrum.scale);
    if spectrum.coeffs.len() != bins.len() {
        return Err(SpectralError::ScaleLength {
            scale: spectrum.scale,
            expected: bins.len(),
            actual: spectrum.coeffs.len(),
        });
    }
    for (&b, &c) in bins.iter().zip(&spectrum.coeffs) {
        half.set(b.u, b.v, c);
    }
    Ok(())
}

/// `Σ_h B h`: embeds every scale's coefficients, completes hermitian
/// symmetry and inverse-transforms. Requires each scale exactly once.
pub fn recompose(
    spectra: &[ScaleSpectrum],
    partition: &ScalePartition,
) -> Result<Tensor, SpectralError> {
    let mut seen = vec![false; partition.num_scales()];
    for s in spectra {
        if s.scale >= seen.len() || seen[s.scale] {
            return Err(SpectralError::OverlappingScale(s.scale));
        }
        seen[s.scale] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(SpectralError::MissingScale(missing));
    }
    let n = partition.size();
    let mut half = HalfSpectrum::zeros(n, n);
    for s in spectra {
        embed_scale(&mut half, s, partition)?;
    }
    idft2(&hermitian_complete(&half)?)
}

/// The image contribution `B h^k` of a single scale.
pub fn recompose_scale(
    spectrum: &ScaleSpectrum,
    partition: &ScalePartition,
) -> Result<Tensor, SpectralError> {
    let n = partition.size();
    let mut half = HalfSpectrum::zeros(n, n);
    embed_scale(&mut half, spectrum, partition)?;
    idft2(&hermitian_complete(&half)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NormalRng;

    fn random_image(n: usize, seed: u64) -> Tensor {
        NormalRng::new(seed, 0).normal_tensor(&[n, n])
    }

    #[test]
    fn round_trip() {
        for n in [1, 2, 4, 8, 16, 32] {
            let p = ScalePartition::new(n, n).unwrap();
            let x = random_image(n, n as u64);
            let back = recompose(&decompose(&x, &p).unwrap(), &p).unwrap();
            for (a, b) in x.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dc_image_only_has_first_scale() {
        let p = ScalePartition::new(8, 8).unwrap();
        let spectra = decompose(&Tensor::filled(&[8, 8], 0.7), &p).unwrap();
        assert!(spectra[0].coeffs[0].re.abs() > 1.0);
        for s in &spectra[1..] {
            assert!(s.l1_norm(&p) < 1e-10);
        }
    }

    #[test]
    fn nyquist_cosine_only_has_final_scale() {
        let p = ScalePartition::new(8, 8).unwrap();
        let x = Tensor::from_fn(&[8, 8], |i| if (i / 8) % 2 == 0 { 1.0 } else { -1.0 });
        let spectra = decompose(&x, &p).unwrap();
        for s in &spectra[..3] {
            assert!(s.l1_norm(&p) < 1e-10, "scale {}", s.scale);
        }
        assert!(spectra[3].l1_norm(&p) > 1.0);
    }

    #[test]
    fn zero_spectra_zero_image() {
        let p = ScalePartition::new(4, 4).unwrap();
        let spectra: Vec<_> = (0..3).map(|k| ScaleSpectrum::zeros(&p, k)).collect();
        assert_eq!(recompose(&spectra, &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn missing_and_duplicate_scales_rejected() {
        let p = ScalePartition::new(4, 4).unwrap();
        let mut spectra: Vec<_> = (0..3).map(|k| ScaleSpectrum::zeros(&p, k)).collect();
        spectra.pop();
        assert!(matches!(
            recompose(&spectra, &p),
            Err(SpectralError::MissingScale(2))
        ));
        spectra.push(ScaleSpectrum::zeros(&p, 1));
        assert!(matches!(
            recompose(&spectra, &p),
            Err(SpectralError::OverlappingScale(1))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = ScalePartition::new(8, 8).unwrap();
        assert!(matches!(
            decompose(&Tensor::zeros(&[4, 4]), &p),
            Err(SpectralError::DimMismatch { .. })
        ));
    }

    #[test]
    fn dof_round_trip() {
        let p = ScalePartition::new(8, 8).unwrap();
        let spectra = decompose(&random_image(8, 3), &p).unwrap();
        for s in &spectra {
            let back = ScaleSpectrum::from_dofs(&p, s.scale, &s.to_dofs(&p)).unwrap();
            assert_eq!(&back, s);
        }
        assert!(ScaleSpectrum::from_dofs(&p, 1, &[0.0]).is_err());
    }
}
