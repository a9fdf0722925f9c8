//! Refinement objective, subset and full-path gradients, and one descent step.

use std::sync::Arc;

use super::config::ReconLoss;
use super::InferenceError;
use crate::autodiff::{Tape, Var};
use crate::model::{nll_var, Binder, GaussianParams, Hierarchy};
use crate::spectral::{AnalysisMap, ScaleSpectrum, SynthesisMap};
use crate::tensor::Tensor;

/// Everything fixed while layer `l` is refined.
#[derive(Clone, Copy, Debug)]
pub struct LayerState<'a> {
    pub layer: usize,
    /// Context `ĥ_{l−1}` on the layer's scale grid.
    pub context: &'a Tensor,
    /// Latents of the subset members after `l`, in order.
    pub rest: &'a [Tensor],
    /// Prior `p(z_l | ĥ_{l−1})`.
    pub prior: &'a GaussianParams,
    /// Observed degrees of freedom of the layer's scale.
    pub target: &'a [f64],
}

/// Objective terms and gradient at one latent value.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEval {
    pub objective: f64,
    pub prior_nll: f64,
    pub recon: f64,
    pub grad: Tensor,
}

/// `J = −log N(z; μ_p, σ_p) + β 𝓛(target, predicted)` on plain values.
pub fn refinement_objective(
    z: &Tensor,
    prior: &GaussianParams,
    target: &ScaleSpectrum,
    predicted: &ScaleSpectrum,
    beta: f64,
    loss: ReconLoss,
    partition: &crate::spectral::ScalePartition,
) -> f64 {
    prior.nll(z) + beta * loss.eval(&predicted.to_dofs(partition), &target.to_dofs(partition))
}

fn recon_var<'t>(
    pred: Var<'t>,
    target: &[f64],
    loss: ReconLoss,
) -> Result<Var<'t>, InferenceError> {
    let t = pred
        .tape()
        .constant(Tensor::new(vec![target.len()], target.to_vec())?);
    let d = pred.sub(t)?;
    Ok(match loss {
        ReconLoss::L1 => d.abs().sum(),
        ReconLoss::L2 => d.square().sum(),
    })
}

/// Finishes the objective on the tape and differentiates it w.r.t. `z`.
fn finish<'t>(
    tape: &'t Tape,
    z: Var<'t>,
    predicted: Var<'t>,
    st: &LayerState<'_>,
    beta: f64,
    loss: ReconLoss,
) -> Result<StepEval, InferenceError> {
    let mu = tape.constant(st.prior.mu.clone());
    let ls = tape.constant(st.prior.log_sigma.clone());
    let nll = nll_var(z, mu, ls)?;
    let recon = recon_var(predicted, st.target, loss)?;
    let objective = nll.add(recon.scale(beta))?;
    let (prior_nll, recon_value, j) = (nll.item()?, recon.item()?, objective.item()?);
    let grads = tape.backward(objective)?;
    let grad = grads
        .get(z)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(&z_shape(st)));
    Ok(StepEval {
        objective: j,
        prior_nll,
        recon: recon_value,
        grad,
    })
}

fn z_shape(st: &LayerState<'_>) -> Vec<usize> {
    st.prior.mu.shape().to_vec()
}

/// Adds `z_l` and the remaining subset latents, then applies the scale head.
fn complete_on<'t>(
    model: &Hierarchy,
    b: &Binder<'t, '_>,
    l: usize,
    ctx: &Tensor,
    z: Var<'t>,
    rest: &[Tensor],
) -> Result<Var<'t>, InferenceError> {
    let tape = b.tape();
    let scale = model.layer(l)?.scale;
    let members = model.scale_layers(scale);
    if rest.len() != members.end - l - 1 {
        return Err(InferenceError::Config(format!(
            "layer {l} needs {} subset latents after it, got {}",
            members.end - l - 1,
            rest.len()
        )));
    }
    let mut h = model.contribute_on(b, l, tape.constant(ctx.clone()), z)?;
    for (m, zm) in (l + 1..members.end).zip(rest) {
        h = model.contribute_on(b, m, h, tape.constant(zm.clone()))?;
    }
    Ok(model.head_on(b, scale, h)?)
}

/// Predicted spectrum of layer `l`'s scale with the subset completed from
/// `z_l` and the given remaining latents.
pub fn complete_scale(
    model: &Hierarchy,
    l: usize,
    ctx: &Tensor,
    z: &Tensor,
    rest: &[Tensor],
) -> Result<ScaleSpectrum, InferenceError> {
    let tape = Tape::new();
    let b = Binder::constants(&tape, model.params());
    let dofs = complete_on(model, &b, l, ctx, tape.constant(z.clone()), rest)?.to_tensor();
    let scale = model.layer(l)?.scale;
    Ok(ScaleSpectrum::from_dofs(
        model.partition(),
        scale,
        dofs.data(),
    )?)
}

/// Gradient of `J` through the layer's own subset only.
pub fn subset_gradient(
    model: &Hierarchy,
    st: &LayerState<'_>,
    z: &Tensor,
    beta: f64,
    loss: ReconLoss,
) -> Result<StepEval, InferenceError> {
    let tape = Tape::new();
    let b = Binder::constants(&tape, model.params());
    let zv = tape.var(z.clone());
    let predicted = complete_on(model, &b, st.layer, st.context, zv, st.rest)?;
    finish(&tape, zv, predicted, st, beta, loss)
}

/// Gradient of the same objective through the whole decoder: every layer
/// after `l`, every head, synthesis of the full image and analysis back to
/// the layer's scale.
///
/// `later` holds the latents of every layer after `l` (the first
/// `st.rest.len()` of them are the subset members) and `earlier_dofs` the
/// fixed coefficients of the scales before the layer's scale.
pub fn vanilla_gradient(
    model: &Hierarchy,
    st: &LayerState<'_>,
    z: &Tensor,
    later: &[Tensor],
    earlier_dofs: &[Vec<f64>],
    beta: f64,
    loss: ReconLoss,
) -> Result<StepEval, InferenceError> {
    let l = st.layer;
    let scale = model.layer(l)?.scale;
    if later.len() != model.depth() - l - 1 || earlier_dofs.len() != scale {
        return Err(InferenceError::Config(format!(
            "full-path gradient of layer {l} needs {} later latents and {scale} earlier scales",
            model.depth() - l - 1
        )));
    }
    let partition = model.partition();
    let n = partition.size();
    let tape = Tape::new();
    let b = Binder::constants(&tape, model.params());
    let zv = tape.var(z.clone());

    let mut parts = Vec::with_capacity(model.num_scales());
    for dofs in earlier_dofs {
        parts.push(tape.constant(Tensor::new(vec![dofs.len()], dofs.clone())?));
    }
    let mut ctx = model.contribute_on(&b, l, tape.constant(st.context.clone()), zv)?;
    let mut next = l + 1;
    for s in scale..model.num_scales() {
        if s > scale {
            ctx = model.ascend_on(&b, s, ctx)?;
        }
        for m in next..model.scale_layers(s).end {
            ctx = model.contribute_on(&b, m, ctx, tape.constant(later[m - l - 1].clone()))?;
        }
        next = model.scale_layers(s).end;
        parts.push(model.head_on(&b, s, ctx)?);
    }
    let mut image: Option<Var<'_>> = None;
    for (s, dofs) in parts.into_iter().enumerate() {
        let img = dofs.linear_map(Arc::new(SynthesisMap::new(partition, s)?), &[n, n])?;
        image = Some(match image {
            Some(acc) => acc.add(img)?,
            None => img,
        });
    }
    let image = image.expect("at least the layer's own scale is synthesized");
    let analysis = Arc::new(AnalysisMap::new(partition, scale)?);
    let predicted = image.linear_map(analysis, &[partition.dof_len(scale)])?;
    finish(&tape, zv, predicted, st, beta, loss)
}

/// One descent step `z ← z − λ ∇J` using the subset gradient.
pub fn refine_layer(
    model: &Hierarchy,
    st: &LayerState<'_>,
    z: &Tensor,
    step_size: f64,
    beta: f64,
    loss: ReconLoss,
) -> Result<(Tensor, StepEval), InferenceError> {
    let eval = subset_gradient(model, st, z, beta, loss)?;
    if !eval.grad.is_finite() {
        return Err(InferenceError::NonFinite {
            layer: st.layer,
            iteration: 0,
        });
    }
    let next = z.zip_with(&eval.grad, |v, g| v - step_size * g)?;
    Ok((next, eval))
}
