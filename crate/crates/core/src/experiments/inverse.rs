//! Deblurring (low-frequency measurements) and denoising.

use crate::inference::{
    infer, InferenceConfig, InferenceError, InferenceResult, Mode, Observation,
};
use crate::model::Hierarchy;
use crate::rng::NormalRng;
use crate::spectral::{decompose_dofs, dft2, Spectrum};
use crate::tensor::Tensor;
use crate::training::log_magnitude;

use super::parallel_map;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseTask {
    Deblur { cutoff_scale: usize },
    Denoise { sigma: f64 },
}

#[derive(Clone, Debug)]
pub struct DeblurOutcome {
    /// Image with every bin above the cutoff set to zero.
    pub observed: Tensor,
    pub result: InferenceResult,
    /// `Σ |ĥ − h| / Σ |h|` over the measured scales.
    pub consistency_l1: f64,
    /// Log-magnitude spectra of the observation and the reconstruction.
    pub observed_spectrum: Tensor,
    pub reconstructed_spectrum: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenoiseOutcome {
    pub noisy: Tensor,
    pub result: InferenceResult,
    /// `MSE(x̂, x_clean)`.
    pub mse: f64,
    /// `MSE(x_noisy, x_clean)`.
    pub input_mse: f64,
}

fn spectrum_image(x: &Tensor) -> Result<Tensor, InferenceError> {
    let s: Spectrum = dft2(x)?;
    Ok(log_magnitude(&s))
}

/// Infers from the bins of scales `0..=cutoff_scale`; finer scales are drawn
/// from the conditional prior without guidance.
pub fn deblur(
    model: &Hierarchy,
    x: &Tensor,
    cutoff_scale: usize,
    cfg: &InferenceConfig,
) -> Result<DeblurOutcome, InferenceError> {
    let observation = Observation::FrequencyMask { cutoff_scale };
    observation.validate(model.partition())?;
    let partition = model.partition();
    let observed = observation.observe(x, partition, &mut NormalRng::new(cfg.seed, 0))?;
    let cfg = InferenceConfig {
        observation,
        ..cfg.clone()
    };
    let result = infer(model, &observed, &cfg)?;
    let target = decompose_dofs(&observed, partition)?;
    let got = decompose_dofs(&result.image, partition)?;
    let (mut num, mut den) = (0.0, 0.0);
    for s in 0..=cutoff_scale {
        for (a, b) in got[s].iter().zip(&target[s]) {
            num += (a - b).abs();
            den += b.abs();
        }
    }
    Ok(DeblurOutcome {
        observed_spectrum: spectrum_image(&observed)?,
        reconstructed_spectrum: spectrum_image(&result.image)?,
        observed,
        consistency_l1: num / den.max(f64::MIN_POSITIVE),
        result,
    })
}

/// Infers from `x_clean + N(0, sigma²)` noise and scores against `x_clean`.
pub fn denoise(
    model: &Hierarchy,
    x_clean: &Tensor,
    sigma: f64,
    cfg: &InferenceConfig,
) -> Result<DenoiseOutcome, InferenceError> {
    let observation = Observation::Noisy { sigma };
    observation.validate(model.partition())?;
    let mut noise_rng = NormalRng::tagged(cfg.seed, &[0x9015e]);
    let noisy = observation.observe(x_clean, model.partition(), &mut noise_rng)?;
    let cfg = InferenceConfig {
        observation,
        ..cfg.clone()
    };
    let result = infer(model, &noisy, &cfg)?;
    Ok(DenoiseOutcome {
        mse: x_clean.mse(&result.image)?,
        input_mse: x_clean.mse(&noisy)?,
        noisy,
        result,
    })
}

/// Mean metric of hybrid(N) against amortized on a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseSummary {
    pub task: InverseTask,
    pub iterations: usize,
    /// Observation-consistency L1 (deblur) or MSE to the clean image (denoise).
    pub hybrid: f64,
    pub amortized: f64,
    /// Mean MSE of the noisy input (denoise only).
    pub input_mse: Option<f64>,
}

pub fn inverse_study(
    model: &Hierarchy,
    images: &[Tensor],
    task: InverseTask,
    base: &InferenceConfig,
    threads: usize,
) -> Result<InverseSummary, InferenceError> {
    let run = |mode: Mode, n: usize| -> Result<(f64, f64), InferenceError> {
        let out = parallel_map(images, threads, |i, x| {
            let cfg = InferenceConfig {
                mode,
                iterations: n,
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            match task {
                InverseTask::Deblur { cutoff_scale } => {
                    deblur(model, x, cutoff_scale, &cfg).map(|o| (o.consistency_l1, 0.0))
                }
                InverseTask::Denoise { sigma } => {
                    denoise(model, x, sigma, &cfg).map(|o| (o.mse, o.input_mse))
                }
            }
        });
        let vals: Vec<(f64, f64)> = out.into_iter().collect::<Result<_, _>>()?;
        let n = vals.len() as f64;
        Ok((
            vals.iter().map(|v| v.0).sum::<f64>() / n,
            vals.iter().map(|v| v.1).sum::<f64>() / n,
        ))
    };
    let (hybrid, input) = run(Mode::Hybrid, base.iterations)?;
    let (amortized, _) = run(Mode::Amortized, 0)?;
    Ok(InverseSummary {
        task,
        iterations: base.iterations,
        hybrid,
        amortized,
        input_mse: matches!(task, InverseTask::Denoise { .. }).then_some(input),
    })
}
