//! Assignment of DFT bins to dyadic model scales.
//!
//! With the centred frequency `f(u) = u` for `u <= N/2` and `u - N` otherwise,
//! scale `k >= 1` covers the box `-2^(k-1) + 1 <= f <= 2^(k-1)` on both axes
//! (exactly the frequencies of a `2^k × 2^k` grid) and owns the annulus
//! `box_k \ box_(k-1)`. Scale 0 owns only the DC bin, and the final scale owns
//! every Nyquist row and column bin.
//!
//! A real image has only half of its spectrum free. The free coefficients are
//! the *canonical* bins: columns `0 < v < W/2`, plus rows `u <= H/2` of the
//! columns `v = 0` and `v = W/2`. Each scale generates the canonical bins it
//! owns; the remaining bins follow by hermitian symmetry.

use super::fft::is_power_of_two;
use super::SpectralError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bin {
    pub u: usize,
    pub v: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalePartition {
    size: usize,
    bin_scale: Vec<usize>,
    canonical: Vec<Vec<Bin>>,
}

/// Smallest scale whose box contains centred frequency `f` along one axis.
fn axis_level(f: i64) -> usize {
    if f == 0 {
        return 0;
    }
    // f > 0 needs 2^(k-1) >= f; f < 0 needs 2^(k-1) >= |f| + 1.
    let need = if f > 0 { f as u64 } else { (-f) as u64 + 1 };
    need.next_power_of_two().trailing_zeros() as usize + 1
}

impl ScalePartition {
    pub fn new(height: usize, width: usize) -> Result<Self, SpectralError> {
        if height != width {
            return Err(SpectralError::NotSquare { height, width });
        }
        if !is_power_of_two(height) {
            return Err(SpectralError::NotPowerOfTwo(height));
        }
        let n = height;
        let mut bin_scale = vec![0; n * n];
        let num_scales = n.trailing_zeros() as usize + 1;
        let mut canonical = vec![Vec::new(); num_scales];
        for u in 0..n {
            for v in 0..n {
                let k = axis_level(centred(u, n)).max(axis_level(centred(v, n)));
                bin_scale[u * n + v] = k;
                if is_canonical(u, v, n) {
                    canonical[k].push(Bin { u, v });
                }
            }
        }
        Ok(Self {
            size: n,
            bin_scale,
            canonical,
        })
    }

    /// Image side length `H = W`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// `log2(H) + 1` scales, from `1×1` up to `H×W`.
    pub fn num_scales(&self) -> usize {
        self.canonical.len()
    }

    /// Side length `2^k` of the grid at scale `k`.
    pub fn scale_side(&self, k: usize) -> usize {
        1 << k
    }

    /// The scale owning bin `(u, v)` under the box-annulus rule.
    pub fn scale_of(&self, u: usize, v: usize) -> usize {
        self.bin_scale[u * self.size + v]
    }

    /// All bins owned by scale `k`, in row-major order.
    pub fn bins(&self, k: usize) -> impl Iterator<Item = Bin> + '_ {
        let n = self.size;
        (0..n * n)
            .filter(move |&i| self.bin_scale[i] == k)
            .map(move |i| Bin { u: i / n, v: i % n })
    }

    pub fn count(&self, k: usize) -> usize {
        self.bin_scale.iter().filter(|&&s| s == k).count()
    }

    /// Free (canonical) bins generated by scale `k`, row-major.
    pub fn canonical_bins(&self, k: usize) -> &[Bin] {
        &self.canonical[k]
    }

    pub fn is_self_conjugate(&self, bin: Bin) -> bool {
        let h = self.size / 2;
        (bin.u == 0 || bin.u == h) && (bin.v == 0 || bin.v == h)
    }

    pub fn conjugate(&self, bin: Bin) -> Bin {
        let n = self.size;
        Bin {
            u: (n - bin.u) % n,
            v: (n - bin.v) % n,
        }
    }

    pub fn is_canonical(&self, bin: Bin) -> bool {
        is_canonical(bin.u, bin.v, self.size)
    }

    /// The scale that generates the value at `(u, v)`: its own scale for
    /// canonical bins, the scale of its conjugate otherwise.
    pub fn generating_scale(&self, u: usize, v: usize) -> usize {
        let bin = Bin { u, v };
        if self.is_canonical(bin) {
            self.scale_of(u, v)
        } else {
            let c = self.conjugate(bin);
            self.scale_of(c.u, c.v)
        }
    }

    /// Number of real degrees of freedom of scale `k`: one per self-conjugate
    /// canonical bin, two (real, imaginary) per other canonical bin.
    pub fn dof_len(&self, k: usize) -> usize {
        self.canonical[k]
            .iter()
            .map(|&b| if self.is_self_conjugate(b) { 1 } else { 2 })
            .sum()
    }

    /// Per-value weights `m_b / (HW)` such that `Σ_k Σ_j w_j d_j²` equals the
    /// squared norm of the image generated by the degree-of-freedom vectors.
    pub fn dof_energy_weights(&self, k: usize) -> Vec<f64> {
        let hw = (self.size * self.size) as f64;
        let mut w = Vec::with_capacity(self.dof_len(k));
        for &b in &self.canonical[k] {
            if self.is_self_conjugate(b) {
                w.push(1.0 / hw);
            } else {
                w.extend([2.0 / hw, 2.0 / hw]);
            }
        }
        w
    }
}

pub(crate) fn centred(u: usize, n: usize) -> i64 {
    if u <= n / 2 {
        u as i64
    } else {
        u as i64 - n as i64
    }
}

fn is_canonical(u: usize, v: usize, n: usize) -> bool {
    let h = n / 2;
    if v == 0 || v == h {
        u <= h
    } else {
        v < h
    }
}
