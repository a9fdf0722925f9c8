//! Wall-clock comparison of subset and full-path refinement across depths.

use crate::inference::{
    infer, snapshot_sweep, subset_gradient, vanilla_gradient, InferenceConfig, InferenceError,
    LayerSnapshot, Mode, ReconLoss,
};
use crate::model::{Hierarchy, InitScheme, ModelConfig};
use crate::training::{generate_synthetic, DatasetKind, DatasetSpec, Normalization};

use super::{median_time, paired_median_time};

pub const BENCH_CSV_HEADER: &str =
    "depth,N,threads,amortized_s,subset_s,vanilla_s,ratio,subset_evals,vanilla_evals";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub resolution: usize,
    pub depths: Vec<usize>,
    /// Refinement steps per layer.
    pub iterations: usize,
    pub warmup: usize,
    pub repetitions: usize,
    pub width_factor: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            depths: vec![6, 12, 18, 24, 30],
            iterations: 25,
            warmup: 2,
            repetitions: 5,
            width_factor: 0.25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub depth: usize,
    pub iterations: usize,
    pub threads: usize,
    /// One amortized inference pass.
    pub amortized_s: f64,
    /// `N` subset-gradient steps for every layer.
    pub subset_s: f64,
    /// `N` full-path gradient steps for every layer.
    pub vanilla_s: f64,
    /// Median over repetitions of the paired `vanilla / subset` time ratio.
    pub ratio: f64,
    /// Contribution-network evaluations for one subset step per layer.
    pub subset_evals: u64,
    /// Contribution-network evaluations for one full-path step per layer.
    pub vanilla_evals: u64,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.4},{},{}",
            self.depth,
            self.iterations,
            self.threads,
            self.amortized_s,
            self.subset_s,
            self.vanilla_s,
            self.ratio,
            self.subset_evals,
            self.vanilla_evals
        )
    }
}

/// Splits `depth` layers over `scales` as evenly as possible, extra layers
/// going to the finest scales.
pub fn spread_layers(depth: usize, scales: usize) -> Vec<usize> {
    let base = depth / scales;
    let extra = depth % scales;
    (0..scales)
        .map(|s| base + usize::from(s >= scales - extra))
        .collect()
}

/// One refinement sweep: `n` descent steps for every layer, with either
/// gradient path.
fn sweep(
    model: &Hierarchy,
    snaps: &[LayerSnapshot],
    n: usize,
    full_path: bool,
) -> Result<(), InferenceError> {
    const STEP: f64 = 1e-3;
    for snap in snaps {
        let st = snap.state();
        let mut z = snap.z.clone();
        for _ in 0..n {
            let eval = if full_path {
                vanilla_gradient(
                    model,
                    &st,
                    &z,
                    &snap.later,
                    &snap.earlier_dofs,
                    1.0,
                    ReconLoss::L1,
                )?
            } else {
                subset_gradient(model, &st, &z, 1.0, ReconLoss::L1)?
            };
            z = z.zip_with(&eval.grad, |v, g| v - STEP * g)?;
        }
    }
    Ok(())
}

/// Times an amortized pass and `N`-step refinement sweeps with subset and
/// full-path gradients on random-weight models of each depth. Runs on the
/// calling thread only.
pub fn bench_depth(cfg: &BenchConfig) -> Result<Vec<BenchRow>, InferenceError> {
    let scales = cfg.resolution.trailing_zeros() as usize + 1;
    let raw = generate_synthetic(&DatasetSpec {
        kind: DatasetKind::GpTexture,
        resolution: cfg.resolution,
        count: 1,
        seed: cfg.seed,
    })
    .map_err(|e| InferenceError::Config(e.to_string()))?;
    let x = Normalization::fit(&raw).apply(&raw[0]);
    let mut rows = Vec::with_capacity(cfg.depths.len());
    for &depth in &cfg.depths {
        if depth < scales {
            return Err(InferenceError::Config(format!(
                "depth {depth} is below the {scales} scales of a {}x{} image",
                cfg.resolution, cfg.resolution
            )));
        }
        let model = Hierarchy::new(ModelConfig {
            layers_per_scale: spread_layers(depth, scales),
            width_factor: cfg.width_factor,
            init: InitScheme::Random,
            seed: cfg.seed,
            ..ModelConfig::uniform(cfg.resolution, 1)
        })?;
        let snaps = snapshot_sweep(&model, &x, cfg.seed)?;

        model.reset_counts();
        sweep(&model, &snaps, 1, false)?;
        let subset_evals = model.eval_counts().contribute;
        model.reset_counts();
        sweep(&model, &snaps, 1, true)?;
        let vanilla_evals = model.eval_counts().contribute;

        let amortized_cfg = InferenceConfig::new(Mode::Amortized, 0);
        let amortized_s = median_time(cfg.warmup, cfg.repetitions, || {
            infer(&model, &x, &amortized_cfg).map(|_| ())
        })?;
        let (subset_s, vanilla_s, ratio) = paired_median_time(
            cfg.warmup,
            cfg.repetitions,
            || sweep(&model, &snaps, cfg.iterations, false),
            || sweep(&model, &snaps, cfg.iterations, true),
        )?;
        rows.push(BenchRow {
            depth,
            iterations: cfg.iterations,
            threads: 1,
            amortized_s,
            subset_s,
            vanilla_s,
            ratio,
            subset_evals,
            vanilla_evals,
        });
    }
    Ok(rows)
}
