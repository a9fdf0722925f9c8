//! Reconstruction quality of the three inference modes.

use std::time::Instant;

use crate::inference::{infer, InferenceConfig, InferenceError, Mode};
use crate::model::{Hierarchy, HALF_LN_TAU};
use crate::tensor::Tensor;

use super::parallel_map;

pub const QUALITY_CSV_HEADER: &str = "mode,N,mse,nll_nats_per_dim,time_s";

#[derive(Clone, Debug, PartialEq)]
pub struct QualityRow {
    pub mode: Mode,
    pub iterations: usize,
    /// Mean per-pixel squared error.
    pub mse: f64,
    /// Mean `(0.5 ‖x − x̂‖² + Σ_l KL(q_l || p_l)) / D + 0.5 ln 2π`, with `q_l`
    /// the distribution each latent was drawn from.
    pub nll_nats_per_dim: f64,
    /// Mean wall-clock seconds per image.
    pub time_s: f64,
}

impl QualityRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.8e},{:.8e},{:.6e}",
            self.mode.as_str(),
            self.iterations,
            self.mse,
            self.nll_nats_per_dim,
            self.time_s
        )
    }
}

struct ImageScore {
    mse: f64,
    nll: f64,
    time_s: f64,
}

fn score(
    model: &Hierarchy,
    x: &Tensor,
    cfg: &InferenceConfig,
) -> Result<ImageScore, InferenceError> {
    let start = Instant::now();
    let r = infer(model, x, cfg)?;
    let time_s = start.elapsed().as_secs_f64();
    let mse = x.mse(&r.image)?;
    let d = model.pixels() as f64;
    Ok(ImageScore {
        mse,
        nll: (0.5 * mse * d + r.kl_init) / d + HALF_LN_TAU,
        time_s,
    })
}

/// Evaluates one configuration on every image; per-image seeds are
/// `base.seed + index`.
pub fn evaluate(
    model: &Hierarchy,
    images: &[Tensor],
    base: &InferenceConfig,
    threads: usize,
) -> Result<QualityRow, InferenceError> {
    let scores = parallel_map(images, threads, |i, x| {
        let cfg = InferenceConfig {
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        score(model, x, &cfg)
    });
    let scores: Vec<ImageScore> = scores.into_iter().collect::<Result<_, _>>()?;
    let n = scores.len() as f64;
    Ok(QualityRow {
        mode: base.mode,
        iterations: base.iterations,
        mse: scores.iter().map(|s| s.mse).sum::<f64>() / n,
        nll_nats_per_dim: scores.iter().map(|s| s.nll).sum::<f64>() / n,
        time_s: scores.iter().map(|s| s.time_s).sum::<f64>() / n,
    })
}

/// Amortized, then iterative(N) and hybrid(N) for every `N`.
pub fn quality_table(
    model: &Hierarchy,
    images: &[Tensor],
    iterations: &[usize],
    base: &InferenceConfig,
    threads: usize,
) -> Result<Vec<QualityRow>, InferenceError> {
    let with = |mode: Mode, n: usize| InferenceConfig {
        mode,
        iterations: n,
        ..base.clone()
    };
    let mut rows = vec![evaluate(model, images, &with(Mode::Amortized, 0), threads)?];
    for mode in [Mode::Iterative, Mode::Hybrid] {
        for &n in iterations {
            rows.push(evaluate(model, images, &with(mode, n), threads)?);
        }
    }
    Ok(rows)
}
