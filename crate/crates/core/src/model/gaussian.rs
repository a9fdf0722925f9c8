//! Diagonal Gaussians: sampling, negative log-likelihood and KL divergence,
//! both on plain tensors and on tape variables.

use crate::autodiff::Var;
use crate::rng::NormalRng;
use crate::tensor::{Tensor, TensorError};

pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// `0.5 ln(2π)`.
pub const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianParams {
    /// Builds the pair, clamping `log_sigma` into `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub fn new(mu: Tensor, log_sigma: Tensor) -> Result<Self, TensorError> {
        if mu.shape() != log_sigma.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "gaussian",
                lhs: mu.shape().to_vec(),
                rhs: log_sigma.shape().to_vec(),
            });
        }
        let log_sigma = log_sigma.map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX));
        Ok(Self { mu, log_sigma })
    }

    pub fn standard(shape: &[usize]) -> Self {
        Self {
            mu: Tensor::zeros(shape),
            log_sigma: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    /// `mu + exp(log_sigma) · ε` with `ε` from `rng`.
    pub fn sample(&self, rng: &mut NormalRng) -> Tensor {
        let eps = rng.normal_tensor(self.mu.shape());
        gaussian_sample_with(&self.mu, &self.log_sigma, &eps)
    }

    /// `-log N(z; mu, sigma)` summed over elements.
    pub fn nll(&self, z: &Tensor) -> f64 {
        z.data()
            .iter()
            .zip(self.mu.data())
            .zip(self.log_sigma.data())
            .map(|((&z, &m), &ls)| {
                let d = (z - m) * (-ls).exp();
                0.5 * d * d + ls + HALF_LN_TAU
            })
            .sum()
    }
}

fn gaussian_sample_with(mu: &Tensor, log_sigma: &Tensor, eps: &Tensor) -> Tensor {
    Tensor::from_fn(mu.shape(), |i| {
        mu.data()[i] + log_sigma.data()[i].exp() * eps.data()[i]
    })
}

/// Reparameterized sample on the tape, differentiable in `mu` and `log_sigma`.
pub fn gaussian_sample<'t>(
    mu: Var<'t>,
    log_sigma: Var<'t>,
    rng: &mut NormalRng,
) -> Result<Var<'t>, TensorError> {
    let eps = rng.normal_tensor(&mu.shape());
    mu.add(log_sigma.exp().mul(mu.tape().constant(eps))?)
}

/// Closed-form `KL(q || p)` for diagonal Gaussians, summed over elements.
pub fn kl_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64, TensorError> {
    if q.shape() != p.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "kl_gaussian",
            lhs: q.shape().to_vec(),
            rhs: p.shape().to_vec(),
        });
    }
    let mut kl = 0.0;
    for i in 0..q.mu.len() {
        let (mq, lq) = (q.mu.data()[i], q.log_sigma.data()[i]);
        let (mp, lp) = (p.mu.data()[i], p.log_sigma.data()[i]);
        let var_ratio = (2.0 * (lq - lp)).exp();
        let d = (mq - mp) * (-lp).exp();
        kl += lp - lq + 0.5 * (var_ratio + d * d) - 0.5;
    }
    Ok(kl)
}

/// `-log N(z; mu, exp(log_sigma))` summed, on the tape.
pub fn nll_var<'t>(z: Var<'t>, mu: Var<'t>, log_sigma: Var<'t>) -> Result<Var<'t>, TensorError> {
    let n = z.value().len() as f64;
    let d = z.sub(mu)?.mul(log_sigma.scale(-1.0).exp())?;
    Ok(d.square()
        .sum()
        .scale(0.5)
        .add(log_sigma.sum())?
        .offset(n * HALF_LN_TAU))
}

/// `KL(q || p)` summed, on the tape.
pub fn kl_var<'t>(
    q_mu: Var<'t>,
    q_ls: Var<'t>,
    p_mu: Var<'t>,
    p_ls: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let n = q_mu.value().len() as f64;
    let var_ratio = q_ls.sub(p_ls)?.scale(2.0).exp();
    let d = q_mu.sub(p_mu)?.mul(p_ls.scale(-1.0).exp())?;
    let inner = var_ratio.add(d.square())?.sum().scale(0.5);
    Ok(p_ls.sub(q_ls)?.sum().add(inner)?.offset(-0.5 * n))
}
