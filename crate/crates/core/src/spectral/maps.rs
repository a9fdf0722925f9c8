//! The spectral operators as differentiable linear maps on real
//! degree-of-freedom vectors (see [`ScaleSpectrum::to_dofs`]).
//!
//! [`ScaleSpectrum::to_dofs`]: super::ScaleSpectrum::to_dofs

use num_complex::Complex64;

use super::fft::Fft2;
use super::partition::{centred, ScalePartition};
use super::SpectralError;
use crate::autodiff::LinearMap;

/// Maps a two-channel (real, imaginary) field on the `n × n` grid of scale
/// `k` to the scale's degrees of freedom: `(HW / n²) · DFT_n(w)` read at the
/// canonical bins the scale owns.
///
/// Every canonical bin of scale `k` has a distinct frequency on the `n × n`
/// grid, so the map is a gather after one small FFT.
pub struct ScaleHeadMap {
    fft: Fft2,
    gain: f64,
    /// `(index on the n × n grid, self-conjugate)` per canonical bin.
    targets: Vec<(usize, bool)>,
    dofs: usize,
}

impl ScaleHeadMap {
    pub fn new(partition: &ScalePartition, scale: usize) -> Result<Self, SpectralError> {
        let big = partition.size();
        let n = partition.scale_side(scale);
        let targets = partition
            .canonical_bins(scale)
            .iter()
            .map(|&b| {
                let lu = centred(b.u, big).rem_euclid(n as i64) as usize;
                let lv = centred(b.v, big).rem_euclid(n as i64) as usize;
                (lu * n + lv, partition.is_self_conjugate(b))
            })
            .collect();
        Ok(Self {
            fft: Fft2::new(n, n)?,
            gain: (big * big) as f64 / (n * n) as f64,
            targets,
            dofs: partition.dof_len(scale),
        })
    }

    fn side(&self) -> usize {
        self.fft.height()
    }
}

impl LinearMap for ScaleHeadMap {
    fn input_len(&self) -> usize {
        2 * self.side() * self.side()
    }

    fn output_len(&self) -> usize {
        self.dofs
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = input
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        self.fft.forward(&mut buf);
        let mut j = 0;
        for &(idx, self_conj) in &self.targets {
            out[j] = self.gain * buf[idx].re;
            j += 1;
            if !self_conj {
                out[j] = self.gain * buf[idx].im;
                j += 1;
            }
        }
    }

    fn adjoint(&self, grad: &[f64], out: &mut [f64]) {
        let n2 = self.side() * self.side();
        let mut buf = vec![Complex64::default(); n2];
        let mut j = 0;
        for &(idx, self_conj) in &self.targets {
            let re = grad[j];
            j += 1;
            let im = if self_conj {
                0.0
            } else {
                j += 1;
                grad[j - 1]
            };
            buf[idx] += self.gain * Complex64::new(re, im);
        }
        // Adjoint of the forward DFT is the unnormalized inverse DFT.
        self.fft.inverse_unnormalized(&mut buf);
        for (o, c) in out.chunks_exact_mut(2).zip(&buf) {
            o[0] += c.re;
            o[1] += c.im;
        }
    }
}

/// `Σ_k B h^k` for the degree-of-freedom vector of one scale: embeds the
/// canonical bins with their conjugates and inverse-transforms to an
/// `H × W` image.
pub struct SynthesisMap {
    fft: Fft2,
    /// `(bin index, conjugate index, self-conjugate)`.
    bins: Vec<(usize, usize, bool)>,
    dofs: usize,
}

/// Forward DFT of an image read at one scale's canonical bins.
pub struct AnalysisMap {
    fft: Fft2,
    bins: Vec<(usize, bool)>,
    dofs: usize,
}

fn flat_bins(partition: &ScalePartition, scale: usize) -> Vec<(usize, usize, bool)> {
    let n = partition.size();
    partition
        .canonical_bins(scale)
        .iter()
        .map(|&b| {
            let c = partition.conjugate(b);
            (b.u * n + b.v, c.u * n + c.v, partition.is_self_conjugate(b))
        })
        .collect()
}

impl SynthesisMap {
    pub fn new(partition: &ScalePartition, scale: usize) -> Result<Self, SpectralError> {
        let n = partition.size();
        Ok(Self {
            fft: Fft2::new(n, n)?,
            bins: flat_bins(partition, scale),
            dofs: partition.dof_len(scale),
        })
    }

    fn pixels(&self) -> usize {
        self.fft.height() * self.fft.width()
    }
}

impl LinearMap for SynthesisMap {
    fn input_len(&self) -> usize {
        self.dofs
    }

    fn output_len(&self) -> usize {
        self.pixels()
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex64::default(); self.pixels()];
        let mut j = 0;
        for &(idx, conj, self_conj) in &self.bins {
            let re = input[j];
            j += 1;
            if self_conj {
                buf[idx] = Complex64::new(re, 0.0);
            } else {
                let x = Complex64::new(re, input[j]);
                j += 1;
                buf[idx] = x;
                buf[conj] = x.conj();
            }
        }
        self.fft.inverse_unnormalized(&mut buf);
        let inv = 1.0 / self.pixels() as f64;
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re * inv;
        }
    }

    fn adjoint(&self, grad: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = grad.iter().map(|&g| Complex64::new(g, 0.0)).collect();
        self.fft.forward(&mut buf);
        let inv = 1.0 / self.pixels() as f64;
        let mut j = 0;
        for &(idx, _, self_conj) in &self.bins {
            if self_conj {
                out[j] += inv * buf[idx].re;
                j += 1;
            } else {
                out[j] += 2.0 * inv * buf[idx].re;
                out[j + 1] += 2.0 * inv * buf[idx].im;
                j += 2;
            }
        }
    }
}

impl AnalysisMap {
    pub fn new(partition: &ScalePartition, scale: usize) -> Result<Self, SpectralError> {
        let n = partition.size();
        Ok(Self {
            fft: Fft2::new(n, n)?,
            bins: flat_bins(partition, scale)
                .into_iter()
                .map(|(idx, _, sc)| (idx, sc))
                .collect(),
            dofs: partition.dof_len(scale),
        })
    }
}

impl LinearMap for AnalysisMap {
    fn input_len(&self) -> usize {
        self.fft.height() * self.fft.width()
    }

    fn output_len(&self) -> usize {
        self.dofs
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.forward(&mut buf);
        let mut j = 0;
        for &(idx, self_conj) in &self.bins {
            out[j] = buf[idx].re;
            j += 1;
            if !self_conj {
                out[j] = buf[idx].im;
                j += 1;
            }
        }
    }

    fn adjoint(&self, grad: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex64::default(); self.input_len()];
        let mut j = 0;
        for &(idx, self_conj) in &self.bins {
            let re = grad[j];
            j += 1;
            let im = if self_conj {
                0.0
            } else {
                j += 1;
                grad[j - 1]
            };
            buf[idx] = Complex64::new(re, im);
        }
        self.fft.inverse_unnormalized(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o += c.re;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NormalRng;
    use crate::spectral::scales::{decompose, recompose_scale, ScaleSpectrum};
    use crate::tensor::Tensor;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// `<A x, y> == <x, Aᵀ y>` for random `x`, `y`.
    fn check_adjoint(map: &dyn LinearMap, seed: u64) {
        let mut rng = NormalRng::new(seed, 0);
        let x: Vec<f64> = (0..map.input_len())
            .map(|_| rng.standard_normal())
            .collect();
        let y: Vec<f64> = (0..map.output_len())
            .map(|_| rng.standard_normal())
            .collect();
        let mut ax = vec![0.0; map.output_len()];
        map.apply(&x, &mut ax);
        let mut aty = vec![0.0; map.input_len()];
        map.adjoint(&y, &mut aty);
        let (l, r) = (dot(&ax, &y), dot(&x, &aty));
        assert!((l - r).abs() <= 1e-9 * l.abs().max(1.0), "{l} vs {r}");
    }

    #[test]
    fn adjoints_are_consistent() {
        let p = ScalePartition::new(16, 16).unwrap();
        for k in 0..p.num_scales() {
            check_adjoint(&ScaleHeadMap::new(&p, k).unwrap(), k as u64);
            check_adjoint(&SynthesisMap::new(&p, k).unwrap(), 10 + k as u64);
            check_adjoint(&AnalysisMap::new(&p, k).unwrap(), 20 + k as u64);
        }
    }

    #[test]
    fn synthesis_matches_recompose_scale_and_analysis_matches_decompose() {
        let p = ScalePartition::new(8, 8).unwrap();
        let x = NormalRng::new(5, 0).normal_tensor(&[8, 8]);
        let spectra = decompose(&x, &p).unwrap();
        for s in &spectra {
            let dofs = s.to_dofs(&p);
            let synth = SynthesisMap::new(&p, s.scale).unwrap();
            let mut img = vec![0.0; 64];
            synth.apply(&dofs, &mut img);
            let oracle = recompose_scale(s, &p).unwrap();
            for (a, b) in img.iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let analysis = AnalysisMap::new(&p, s.scale).unwrap();
            let mut back = vec![0.0; dofs.len()];
            analysis.apply(x.data(), &mut back);
            for (a, b) in back.iter().zip(&dofs) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn head_of_constant_field_is_dc_only() {
        let p = ScalePartition::new(8, 8).unwrap();
        // A constant real field at scale 1 maps to the DC bin of its grid,
        // which scale 1 does not own, so every owned DOF is zero.
        let head = ScaleHeadMap::new(&p, 1).unwrap();
        let mut out = vec![0.0; head.output_len()];
        head.apply(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        // At scale 0 the single DOF is the DC coefficient of the full image.
        let head0 = ScaleHeadMap::new(&p, 0).unwrap();
        let mut dc = [0.0];
        head0.apply(&[0.5, 0.0], &mut dc);
        let s = ScaleSpectrum::from_dofs(&p, 0, &dc).unwrap();
        let img = recompose_scale(&s, &p).unwrap();
        assert!(img.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let _ = Tensor::zeros(&[1]);
    }
}
