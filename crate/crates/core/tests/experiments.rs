//! Experiment drivers on small models.

mod common;

use common::{random_image, random_model};
use iahvae::experiments::{
    bench_depth, deblur, denoise, inverse_study, quality_table, spread_layers, BenchConfig,
    InverseTask,
};
use iahvae::inference::{InferenceConfig, Mode};
use iahvae::spectral::decompose_dofs;

#[test]
fn bench_counts_follow_closed_forms() {
    let cfg = BenchConfig {
        resolution: 8,
        depths: vec![4, 8],
        iterations: 1,
        warmup: 0,
        repetitions: 1,
        width_factor: 1.0 / 16.0,
        seed: 3,
    };
    let rows = bench_depth(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    for (row, depth) in rows.iter().zip([4u64, 8]) {
        let subset: u64 = spread_layers(depth as usize, 4)
            .iter()
            .map(|&m| (m * (m + 1) / 2) as u64)
            .sum();
        assert_eq!(row.vanilla_evals, depth * (depth + 1) / 2);
        assert_eq!(row.subset_evals, subset);
        assert_eq!(row.threads, 1);
        assert!(row.subset_s > 0.0 && row.vanilla_s > 0.0);
    }
}

#[test]
fn quality_table_has_every_mode_and_ignores_thread_count() {
    let m = random_model(8, 1, 4);
    let images: Vec<_> = (0..4).map(|i| random_image(8, i)).collect();
    let base = InferenceConfig::default();
    let one = quality_table(&m, &images, &[1, 3], &base, 1).unwrap();
    let two = quality_table(&m, &images, &[1, 3], &base, 2).unwrap();
    let modes: Vec<(Mode, usize)> = one.iter().map(|r| (r.mode, r.iterations)).collect();
    assert_eq!(
        modes,
        vec![
            (Mode::Amortized, 0),
            (Mode::Iterative, 1),
            (Mode::Iterative, 3),
            (Mode::Hybrid, 1),
            (Mode::Hybrid, 3)
        ]
    );
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a.mse.to_bits(), b.mse.to_bits());
        assert_eq!(a.nll_nats_per_dim.to_bits(), b.nll_nats_per_dim.to_bits());
    }
}

#[test]
fn deblur_observation_keeps_only_coarse_scales() {
    let m = random_model(16, 1, 5);
    let x = random_image(16, 6);
    let out = deblur(&m, &x, 2, &InferenceConfig::new(Mode::Hybrid, 2)).unwrap();
    let (obs, clean) = (
        decompose_dofs(&out.observed, m.partition()).unwrap(),
        decompose_dofs(&x, m.partition()).unwrap(),
    );
    for s in 0..obs.len() {
        for (a, b) in obs[s].iter().zip(&clean[s]) {
            let expect = if s <= 2 { *b } else { 0.0 };
            assert!((a - expect).abs() < 1e-9, "scale {s}");
        }
    }
    assert!(out.consistency_l1.is_finite() && out.consistency_l1 >= 0.0);
}

#[test]
fn denoise_noise_has_the_requested_variance() {
    let m = random_model(32, 1, 7);
    let x = random_image(32, 8);
    let sigma = 1.5;
    let out = denoise(&m, &x, sigma, &InferenceConfig::new(Mode::Amortized, 0)).unwrap();
    let n = x.len() as f64;
    // MSE of the noisy input is a mean of n scaled chi-squared(1) draws.
    let se = sigma * sigma * (2.0 / n).sqrt();
    assert!(
        (out.input_mse - sigma * sigma).abs() < 5.0 * se,
        "{}",
        out.input_mse
    );
}

#[test]
fn inverse_study_reports_both_modes() {
    let m = random_model(8, 1, 9);
    let images: Vec<_> = (0..3).map(|i| random_image(8, 20 + i)).collect();
    let base = InferenceConfig::new(Mode::Hybrid, 2);
    let s = inverse_study(&m, &images, InverseTask::Denoise { sigma: 1.0 }, &base, 1).unwrap();
    assert_eq!(s.iterations, 2);
    assert!(s.input_mse.is_some() && s.hybrid.is_finite() && s.amortized.is_finite());
    let d = inverse_study(
        &m,
        &images,
        InverseTask::Deblur { cutoff_scale: 1 },
        &base,
        1,
    )
    .unwrap();
    assert!(d.input_mse.is_none());
}
