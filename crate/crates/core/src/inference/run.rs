//! The top-down inference sweep shared by all three modes.

use std::time::Instant;

use super::config::{InferenceConfig, Mode};
use super::refine::{refine_layer, LayerState};
use super::InferenceError;
use crate::model::{kl_gaussian, Hierarchy, ModelError};
use crate::rng::NormalRng;
use crate::spectral::{decompose_dofs, recompose, ScaleSpectrum};
use crate::tensor::Tensor;

/// One refinement iteration of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub layer: usize,
    pub scale: usize,
    pub iteration: usize,
    /// `J` before the step.
    pub objective: f64,
    pub prior_nll: f64,
    pub recon: f64,
    pub grad_norm: f64,
    pub time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferenceTrace {
    pub rows: Vec<TraceRow>,
}

impl InferenceTrace {
    pub const CSV_HEADER: &'static str =
        "layer,scale,iteration,objective,prior_nll,recon_loss,grad_norm,time_s";

    pub fn rows_for(&self, layer: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.layer == layer)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e}\n",
                r.layer,
                r.scale,
                r.iteration,
                r.objective,
                r.prior_nll,
                r.recon,
                r.grad_norm,
                r.time_s
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub image: Tensor,
    pub latents: Vec<Tensor>,
    pub spectra: Vec<ScaleSpectrum>,
    pub trace: InferenceTrace,
    /// `Σ_l KL(q_l || p_l)` of the distributions the latents were first
    /// drawn from (zero for prior draws).
    pub kl_init: f64,
}

/// Runs inference on an observed image.
///
/// Per layer (top-down): the prior is evaluated on the current context; the
/// latent is drawn from the posterior (hybrid, amortized) or the prior
/// (iterative, and unmeasured scales); guided layers are then refined for
/// `N` steps with the subset gradient. Latents of later subset members are
/// held at the posterior mean (hybrid) or prior mean (iterative) during the
/// steps, recomputed each time the sweep reaches a new layer.
pub fn infer(
    model: &Hierarchy,
    x_obs: &Tensor,
    cfg: &InferenceConfig,
) -> Result<InferenceResult, InferenceError> {
    cfg.validate()?;
    let partition = model.partition();
    cfg.observation.validate(partition)?;
    let n = model.config().resolution;
    if x_obs.shape() != [n, n] {
        return Err(ModelError::Shape {
            what: "observation",
            expected: vec![n, n],
            actual: x_obs.shape().to_vec(),
        }
        .into());
    }
    let targets = decompose_dofs(x_obs, partition)?;
    let uses_encoder = cfg.mode != Mode::Iterative;
    let feats = if uses_encoder {
        model.bottom_up(x_obs)?
    } else {
        Vec::new()
    };
    let mut rng = NormalRng::tagged(cfg.seed, &[0x1f3]);

    let mut ctx = model.initial_context();
    let mut latents = Vec::with_capacity(model.depth());
    let mut spectra = Vec::with_capacity(model.num_scales());
    let mut trace = InferenceTrace::default();
    let mut kl_init = 0.0;

    for s in 0..model.num_scales() {
        if s > 0 {
            ctx = model.ascend(s, &ctx)?;
        }
        let guided = cfg.observation.guides(s);
        let members = model.scale_layers(s);
        for l in members.clone() {
            let prior = model.prior_params(l, &ctx)?;
            let init = if uses_encoder && guided {
                let q = model.posterior_params(l, &ctx, &feats[s])?;
                kl_init += kl_gaussian(&q, &prior)?;
                q
            } else {
                prior.clone()
            };
            let mut z = init.sample(&mut rng);

            if guided && cfg.iterations > 0 {
                let rest = placeholders(model, l, &ctx, &z, cfg.mode, feats.get(s))?;
                let st = LayerState {
                    layer: l,
                    context: &ctx,
                    rest: &rest,
                    prior: &prior,
                    target: &targets[s],
                };
                let beta = cfg.beta_for(l);
                for iteration in 0..cfg.iterations {
                    let start = Instant::now();
                    let (next, eval) = refine_layer(model, &st, &z, cfg.step_size, beta, cfg.loss)
                        .map_err(|e| match e {
                            InferenceError::NonFinite { layer, .. } => {
                                InferenceError::NonFinite { layer, iteration }
                            }
                            InferenceError::Model(ModelError::Tensor(_)) => {
                                InferenceError::NonFinite {
                                    layer: l,
                                    iteration,
                                }
                            }
                            other => other,
                        })?;
                    z = next;
                    trace.rows.push(TraceRow {
                        layer: l,
                        scale: s,
                        iteration,
                        objective: eval.objective,
                        prior_nll: eval.prior_nll,
                        recon: eval.recon,
                        grad_norm: eval.grad.norm_sq().sqrt(),
                        time_s: start.elapsed().as_secs_f64(),
                    });
                }
            }
            ctx = model.contribute(l, &ctx, &z)?;
            latents.push(z);
        }
        spectra.push(model.reconstruct_scale(s, &ctx)?);
    }
    let image = recompose(&spectra, partition)?;
    Ok(InferenceResult {
        image,
        latents,
        spectra,
        trace,
        kl_init,
    })
}

/// Mean latents for the subset members after `l`, obtained by running the
/// subset forward from `z_l`.
fn placeholders(
    model: &Hierarchy,
    l: usize,
    ctx: &Tensor,
    z: &Tensor,
    mode: Mode,
    feat: Option<&Tensor>,
) -> Result<Vec<Tensor>, InferenceError> {
    let end = model.scale_layers(model.layer(l)?.scale).end;
    let mut rest = Vec::with_capacity(end - l - 1);
    if l + 1 == end {
        return Ok(rest);
    }
    let mut h = model.contribute(l, ctx, z)?;
    for m in l + 1..end {
        let mean = match (mode, feat) {
            (Mode::Hybrid, Some(f)) => model.posterior_params(m, &h, f)?.mu,
            _ => model.prior_params(m, &h)?.mu,
        };
        if m + 1 < end {
            h = model.contribute(m, &h, &mean)?;
        }
        rest.push(mean);
    }
    Ok(rest)
}
