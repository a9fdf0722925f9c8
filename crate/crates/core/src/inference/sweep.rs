//! Owned per-layer refinement states from one amortized pass, for gradient
//! comparisons and timing.

use super::refine::LayerState;
use super::InferenceError;
use crate::model::{GaussianParams, Hierarchy};
use crate::rng::NormalRng;
use crate::spectral::decompose_dofs;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LayerSnapshot {
    pub layer: usize,
    pub scale: usize,
    pub context: Tensor,
    pub prior: GaussianParams,
    /// The layer's sampled latent.
    pub z: Tensor,
    /// Latents of the remaining subset members.
    pub rest: Vec<Tensor>,
    /// Latents of every later layer.
    pub later: Vec<Tensor>,
    /// Coefficients of the scales before this layer's scale.
    pub earlier_dofs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl LayerSnapshot {
    pub fn state(&self) -> LayerState<'_> {
        LayerState {
            layer: self.layer,
            context: &self.context,
            rest: &self.rest,
            prior: &self.prior,
            target: &self.target,
        }
    }
}

/// Samples every latent from the posterior of `x` and records, for each
/// layer, everything its refinement step needs.
pub fn snapshot_sweep(
    model: &Hierarchy,
    x: &Tensor,
    seed: u64,
) -> Result<Vec<LayerSnapshot>, InferenceError> {
    let partition = model.partition();
    let targets = decompose_dofs(x, partition)?;
    let feats = model.bottom_up(x)?;
    let mut rng = NormalRng::tagged(seed, &[0x5a3]);
    let mut ctx = model.initial_context();
    let mut contexts = Vec::with_capacity(model.depth());
    let mut priors = Vec::with_capacity(model.depth());
    let mut latents = Vec::with_capacity(model.depth());
    let mut dofs = Vec::with_capacity(model.num_scales());
    for (s, feat) in feats.iter().enumerate() {
        if s > 0 {
            ctx = model.ascend(s, &ctx)?;
        }
        for l in model.scale_layers(s) {
            priors.push(model.prior_params(l, &ctx)?);
            let z = model.posterior_params(l, &ctx, feat)?.sample(&mut rng);
            contexts.push(ctx.clone());
            ctx = model.contribute(l, &ctx, &z)?;
            latents.push(z);
        }
        dofs.push(model.reconstruct_scale(s, &ctx)?.to_dofs(partition));
    }
    let mut out = Vec::with_capacity(model.depth());
    for (l, (context, prior)) in contexts.into_iter().zip(priors).enumerate() {
        let scale = model.layer(l)?.scale;
        let end = model.scale_layers(scale).end;
        out.push(LayerSnapshot {
            layer: l,
            scale,
            context,
            prior,
            z: latents[l].clone(),
            rest: latents[l + 1..end].to_vec(),
            later: latents[l + 1..].to_vec(),
            earlier_dofs: dofs[..scale].to_vec(),
            target: targets[scale].clone(),
        });
    }
    Ok(out)
}
