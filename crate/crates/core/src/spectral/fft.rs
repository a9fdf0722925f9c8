//! Iterative radix-2 Cooley–Tukey FFT for power-of-two sizes.

use num_complex::Complex64;

use super::SpectralError;
use crate::tensor::Tensor;

/// A precomputed 1-D transform plan of length `n` (a power of two).
#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

pub fn is_power_of_two(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

impl Fft {
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        if !is_power_of_two(n) {
            return Err(SpectralError::NotPowerOfTwo(n));
        }
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -std::f64::consts::TAU * k as f64 / n as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let w = if inverse { w.conj() } else { w };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    /// Unnormalized forward transform, `X[k] = Σ x[n] e^{-2πikn/N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Unnormalized inverse transform, `x[n] = Σ X[k] e^{+2πikn/N}`.
    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }
}

/// Paired row/column plans for `height × width` transforms.
#[derive(Clone, Debug)]
pub struct Fft2 {
    rows: Fft,
    cols: Fft,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Result<Self, SpectralError> {
        Ok(Self {
            rows: Fft::new(width)?,
            cols: Fft::new(height)?,
        })
    }

    pub fn height(&self) -> usize {
        self.cols.len()
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height(), self.width());
        assert_eq!(buf.len(), h * w);
        for row in buf.chunks_mut(w) {
            if inverse {
                self.rows.inverse_unnormalized(row);
            } else {
                self.rows.forward(row);
            }
        }
        let mut col = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = buf[r * w + c];
            }
            if inverse {
                self.cols.inverse_unnormalized(&mut col);
            } else {
                self.cols.forward(&mut col);
            }
            for r in 0..h {
                buf[r * w + c] = col[r];
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.apply(buf, false);
    }

    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        self.apply(buf, true);
    }
}

/// A full `height × width` complex spectrum, row-major in `(u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::default(); height * width],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.width + v]
    }

    pub fn set(&mut self, u: usize, v: usize, value: Complex64) {
        self.data[u * self.width + v] = value;
    }

    /// Largest deviation from `X[-u, -v] = conj(X[u, v])`.
    pub fn hermitian_defect(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst: f64 = 0.0;
        for u in 0..h {
            for v in 0..w {
                let partner = self.get((h - u) % h, (w - v) % w);
                worst = worst.max((self.get(u, v) - partner.conj()).norm());
            }
        }
        worst
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize), SpectralError> {
    match *image.shape() {
        [h, w] => {
            if !is_power_of_two(h) {
                return Err(SpectralError::NotPowerOfTwo(h));
            }
            if !is_power_of_two(w) {
                return Err(SpectralError::NotPowerOfTwo(w));
            }
            Ok((h, w))
        }
        _ => Err(SpectralError::NotAnImage(image.shape().to_vec())),
    }
}

/// Unnormalized forward 2-D DFT of a real `[H, W]` image.
pub fn dft2(image: &Tensor) -> Result<Spectrum, SpectralError> {
    let (h, w) = image_dims(image)?;
    let mut data: Vec<Complex64> = image
        .data()
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    Fft2::new(h, w)?.forward(&mut data);
    Ok(Spectrum {
        height: h,
        width: w,
        data,
    })
}

/// Relative imaginary residue tolerated by [`idft2`].
pub const REAL_TOLERANCE: f64 = 1e-9;

/// Inverse 2-D DFT with `1/(HW)` normalization. The spectrum must be
/// hermitian: an imaginary residue above [`REAL_TOLERANCE`] relative to the
/// real part is rejected.
pub fn idft2(spectrum: &Spectrum) -> Result<Tensor, SpectralError> {
    let (h, w) = (spectrum.height, spectrum.width);
    let mut data = spectrum.data.clone();
    Fft2::new(h, w)?.inverse_unnormalized(&mut data);
    let scale = 1.0 / (h * w) as f64;
    let max_re = data.iter().fold(0.0f64, |m, c| m.max(c.re.abs())) * scale;
    let max_im = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs())) * scale;
    if max_im > REAL_TOLERANCE * max_re {
        return Err(SpectralError::NotHermitian {
            max_imag: max_im,
            max_real: max_re,
        });
    }
    Tensor::new(vec![h, w], data.iter().map(|c| c.re * scale).collect())
        .map_err(SpectralError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        let a = -std::f64::consts::TAU * (k * j) as f64 / n as f64;
                        x[j] * Complex64::new(a.cos(), a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for n in [1, 2, 4, 8, 32] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut fast = x.clone();
            Fft::new(n).unwrap().forward(&mut fast);
            for (a, b) in fast.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(Fft::new(6), Err(SpectralError::NotPowerOfTwo(6))));
        let img = Tensor::zeros(&[4, 6]);
        assert!(dft2(&img).is_err());
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = Tensor::filled(&[8, 8], 1.5);
        let s = dft2(&img).unwrap();
        assert!((s.get(0, 0) - Complex64::new(1.5 * 64.0, 0.0)).norm() < 1e-12);
        for (i, c) in s.data.iter().enumerate().skip(1) {
            assert!(c.norm() < 1e-12, "bin {i}");
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut img = Tensor::zeros(&[4, 4]);
        img.data_mut()[0] = 1.0;
        let s = dft2(&img).unwrap();
        for c in &s.data {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_image() {
        let img = idft2(&Spectrum::zeros(4, 4)).unwrap();
        assert_eq!(img.max_abs(), 0.0);
    }

    #[test]
    fn two_by_two_round_trip() {
        let img = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let back = idft2(&dft2(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut s = Spectrum::zeros(4, 4);
        s.set(0, 1, Complex64::new(1.0, 0.0));
        assert!(matches!(idft2(&s), Err(SpectralError::NotHermitian { .. })));
    }
}
