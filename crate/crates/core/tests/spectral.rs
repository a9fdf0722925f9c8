//! Spectral transforms and the scale partition against independent oracles.

use iahvae::spectral::{
    decompose, decompose_dofs, dft2, hermitian_complete, idft2, recompose, recompose_scale, Bin,
    Fft2, HalfSpectrum, ScalePartition, ScaleSpectrum,
};
use iahvae::tensor::Tensor;
use num_complex::Complex64;
use proptest::prelude::*;

/// Direct `O(N^4)` DFT.
fn naive_dft2(x: &Tensor) -> Vec<Complex64> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![Complex64::default(); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::default();
            for y in 0..h {
                for z in 0..w {
                    let phase = -std::f64::consts::TAU
                        * ((u * y) as f64 / h as f64 + (v * z) as f64 / w as f64);
                    acc += x.data()[y * w + z] * Complex64::from_polar(1.0, phase);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

fn image(side: usize, values: &[f64]) -> Tensor {
    Tensor::new(vec![side, side], values[..side * side].to_vec()).unwrap()
}

fn side_strategy(max_log: u32) -> impl Strategy<Value = usize> {
    (0..=max_log).prop_map(|k| 1usize << k)
}

fn pixels(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, max)
}

/// Scale of a centred frequency pair found by scanning grids `2^k`: the
/// smallest grid whose frequency set contains both.
fn oracle_scale(fu: i64, fv: i64, num_scales: usize) -> usize {
    let on_grid = |f: i64, k: usize| {
        if k == 0 {
            f == 0
        } else {
            let half = 1i64 << (k - 1);
            (-half < f) && (f <= half)
        }
    };
    (0..num_scales)
        .find(|&k| on_grid(fu, k) && on_grid(fv, k))
        .expect("every bin is on the full grid")
}

fn centred(u: usize, n: usize) -> i64 {
    if 2 * u <= n {
        u as i64
    } else {
        u as i64 - n as i64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_matches_direct_dft(side in side_strategy(4), values in pixels(256)) {
        let x = image(side, &values);
        let fast = dft2(&x).unwrap();
        let slow = naive_dft2(&x);
        let scale = slow.iter().fold(1.0f64, |m, c| m.max(c.norm()));
        for (a, b) in fast.data.iter().zip(&slow) {
            prop_assert!((a - b).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn fft_round_trip(side in side_strategy(6), values in pixels(4096)) {
        let x = image(side, &values);
        let back = idft2(&dft2(&x).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn parseval(side in side_strategy(6), values in pixels(4096)) {
        let x = image(side, &values);
        let spectral = dft2(&x).unwrap().energy() / (side * side) as f64;
        let direct = x.norm_sq();
        prop_assert!((spectral - direct).abs() <= 1e-9 * direct.max(1e-300));
    }

    #[test]
    fn completion_of_random_half_is_real(log in 1u32..=6, values in prop::collection::vec(-5.0f64..5.0, 2 * 64 * 33)) {
        let n = 1usize << log;
        let mut half = HalfSpectrum::zeros(n, n);
        let mut it = values.chunks_exact(2);
        for u in 0..n {
            for v in 0..half.cols() {
                let c = it.next().unwrap();
                let self_conj = (u == 0 || u == n / 2) && (v == 0 || v == n / 2);
                half.set(u, v, Complex64::new(c[0], if self_conj { 0.0 } else { c[1] }));
            }
        }
        let full = hermitian_complete(&half).unwrap();
        prop_assert_eq!(full.hermitian_defect(), 0.0);
        let mut buf = full.data.clone();
        Fft2::new(n, n).unwrap().inverse_unnormalized(&mut buf);
        let max_re = buf.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
        let max_im = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        prop_assert!(max_im <= 1e-9 * max_re, "imag {} real {}", max_im, max_re);
    }

    #[test]
    fn decomposition_round_trips_and_is_linear(
        log in 1u32..=5,
        a in pixels(1024),
        b in pixels(1024),
        alpha in -3.0f64..3.0,
    ) {
        let n = 1usize << log;
        let p = ScalePartition::new(n, n).unwrap();
        let (x, y) = (image(n, &a), image(n, &b));
        let back = recompose(&decompose(&x, &p).unwrap(), &p).unwrap();
        for (u, v) in x.data().iter().zip(back.data()) {
            prop_assert!((u - v).abs() < 1e-10);
        }
        let mix = x.zip_with(&y, |u, v| alpha * u + v).unwrap();
        let (dx, dy, dm) = (
            decompose_dofs(&x, &p).unwrap(),
            decompose_dofs(&y, &p).unwrap(),
            decompose_dofs(&mix, &p).unwrap(),
        );
        for k in 0..p.num_scales() {
            for j in 0..dm[k].len() {
                prop_assert!((dm[k][j] - (alpha * dx[k][j] + dy[k][j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn per_scale_images_sum_and_split_energy(log in 1u32..=5, a in pixels(1024)) {
        let n = 1usize << log;
        let p = ScalePartition::new(n, n).unwrap();
        let x = image(n, &a);
        let parts: Vec<Tensor> = decompose(&x, &p)
            .unwrap()
            .iter()
            .map(|s| recompose_scale(s, &p).unwrap())
            .collect();
        // Components occupy disjoint frequencies, so they are orthogonal.
        let energies: f64 = parts.iter().map(Tensor::norm_sq).sum();
        prop_assert!((energies - x.norm_sq()).abs() < 1e-9 * x.norm_sq().max(1.0));
        for i in 0..n * n {
            let s: f64 = parts.iter().map(|t| t.data()[i]).sum();
            prop_assert!((s - x.data()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn dof_round_trip(log in 0u32..=5, values in prop::collection::vec(-4.0f64..4.0, 2048)) {
        let n = 1usize << log;
        let p = ScalePartition::new(n, n).unwrap();
        for k in 0..p.num_scales() {
            let d = &values[..p.dof_len(k)];
            let s = ScaleSpectrum::from_dofs(&p, k, d).unwrap();
            prop_assert_eq!(s.to_dofs(&p), d.to_vec());
        }
    }
}

#[test]
fn partition_is_complete_disjoint_and_matches_grid_oracle() {
    for log in 2..=6 {
        let n = 1usize << log;
        let p = ScalePartition::new(n, n).unwrap();
        let mut owner = vec![None; n * n];
        for k in 0..p.num_scales() {
            for b in p.bins(k) {
                assert!(
                    owner[b.u * n + b.v].is_none(),
                    "bin {b:?} owned twice at {n}"
                );
                owner[b.u * n + b.v] = Some(k);
            }
        }
        for u in 0..n {
            for v in 0..n {
                let k = owner[u * n + v].expect("every bin owned");
                assert_eq!(
                    k,
                    oracle_scale(centred(u, n), centred(v, n), p.num_scales())
                );
            }
        }
        // Scales 0..=k together cover exactly a 2^k × 2^k grid.
        let mut cumulative = 0;
        for k in 0..p.num_scales() {
            cumulative += p.count(k);
            assert_eq!(cumulative, 1 << (2 * k));
        }
    }
}

#[test]
fn eight_by_eight_places_dc_first_and_nyquist_last() {
    let p = ScalePartition::new(8, 8).unwrap();
    assert_eq!(p.num_scales(), 4);
    assert_eq!(p.scale_of(0, 0), 0);
    assert_eq!(p.bins(0).collect::<Vec<_>>(), vec![Bin { u: 0, v: 0 }]);
    for (u, v) in [(4, 0), (0, 4), (4, 4), (4, 3), (1, 4)] {
        assert_eq!(p.scale_of(u, v), 3, "Nyquist bin ({u}, {v})");
    }
    assert_eq!(
        [p.count(0), p.count(1), p.count(2), p.count(3)],
        [1, 3, 12, 48]
    );
}

#[test]
fn canonical_bins_cover_each_conjugate_pair_once() {
    for log in 0..=5 {
        let n = 1usize << log;
        let p = ScalePartition::new(n, n).unwrap();
        let mut seen = vec![0; n * n];
        for k in 0..p.num_scales() {
            for &b in p.canonical_bins(k) {
                let c = p.conjugate(b);
                seen[b.u * n + b.v] += 1;
                if c != b {
                    seen[c.u * n + c.v] += 1;
                }
                assert_eq!(
                    p.generating_scale(c.u, c.v),
                    k,
                    "conjugate generated by the same scale"
                );
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        let dofs: usize = (0..p.num_scales()).map(|k| p.dof_len(k)).sum();
        assert_eq!(dofs, n * n, "one real degree of freedom per pixel");
    }
}
