//! The evidence lower bound and the per-image training loss.

use super::gaussian::{gaussian_sample, kl_var, HALF_LN_TAU};
use super::hierarchy::Hierarchy;
use super::params::Binder;
use super::ModelError;
use crate::autodiff::{Tape, Var};
use crate::rng::NormalRng;
use crate::spectral::decompose_dofs;
use crate::tensor::Tensor;

/// Per-image loss components.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    /// `0.5 ‖x − x̂‖²`.
    pub recon: f64,
    /// `KL(q_l || p_l)` per layer.
    pub kl: Vec<f64>,
}

impl LossParts {
    pub fn kl_total(&self) -> f64 {
        self.kl.iter().sum()
    }
}

/// Records `(0.5 ‖x − x̂‖² + Σ_l KL_l) / D` for one image on the tape.
///
/// `targets` are the per-scale degrees of freedom of `x` (see
/// [`decompose_dofs`]). The squared error is evaluated in the frequency
/// domain with Parseval weights, so no inverse transform is recorded.
pub fn image_loss_on<'t>(
    model: &Hierarchy,
    b: &Binder<'t, '_>,
    x: &Tensor,
    targets: &[Vec<f64>],
    rng: &mut NormalRng,
) -> Result<(Var<'t>, LossParts), ModelError> {
    let tape = b.tape();
    let partition = model.partition();
    let feats = model.bottom_up_on(b, tape.constant(x.clone()))?;
    let mut ctx = model.initial_context_on(b);
    let mut kl = Vec::with_capacity(model.depth());
    let mut total: Option<Var<'t>> = None;
    let mut accumulate = |v: Var<'t>| -> Result<(), ModelError> {
        total = Some(match total {
            Some(t) => t.add(v)?,
            None => v,
        });
        Ok(())
    };
    let mut recon = 0.0;
    for s in 0..model.num_scales() {
        if s > 0 {
            ctx = model.ascend_on(b, s, ctx)?;
        }
        for l in model.scale_layers(s) {
            let (pm, pl) = model.prior_on(b, l, ctx)?;
            let (qm, ql) = model.posterior_on(b, l, ctx, feats[s])?;
            let z = gaussian_sample(qm, ql, rng)?;
            let kl_l = kl_var(qm, ql, pm, pl)?;
            kl.push(kl_l.item()?);
            accumulate(kl_l)?;
            ctx = model.contribute_on(b, l, ctx, z)?;
        }
        let dofs = model.head_on(b, s, ctx)?;
        let n = partition.dof_len(s);
        let target = tape.constant(Tensor::new(vec![n], targets[s].clone())?);
        let weights = tape.constant(Tensor::new(vec![n], partition.dof_energy_weights(s))?);
        let err = dofs.sub(target)?.square().mul(weights)?.sum().scale(0.5);
        recon += err.item()?;
        accumulate(err)?;
    }
    let loss = total
        .expect("a model has at least one scale")
        .scale(1.0 / model.pixels() as f64);
    Ok((loss, LossParts { recon, kl }))
}

/// Single-sample ELBO with diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub parts: LossParts,
    /// `−0.5 ‖x − x̂‖² − Σ_l KL_l`, excluding the likelihood constant.
    pub elbo: f64,
    /// `(−ELBO + (D/2) ln 2π) / D` under the unit-variance Gaussian likelihood.
    pub nll_nats_per_dim: f64,
}

impl ElboTerms {
    /// Layers whose KL exceeds `threshold` nats.
    pub fn active_layers(&self, threshold: f64) -> usize {
        self.parts.kl.iter().filter(|&&k| k > threshold).count()
    }
}

pub fn elbo(model: &Hierarchy, x: &Tensor, seed: u64) -> Result<ElboTerms, ModelError> {
    let targets = decompose_dofs(x, model.partition())?;
    let tape = Tape::new();
    let b = Binder::constants(&tape, model.params());
    let mut rng = NormalRng::new(seed, 0);
    let (_, parts) = image_loss_on(model, &b, x, &targets, &mut rng)?;
    let elbo = -parts.recon - parts.kl_total();
    let d = model.pixels() as f64;
    Ok(ElboTerms {
        nll_nats_per_dim: (-elbo) / d + HALF_LN_TAU,
        parts,
        elbo,
    })
}
