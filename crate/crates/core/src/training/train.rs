//! The ELBO training loop.

use std::collections::BTreeMap;

use super::optim::{clip_global_norm, Adam};
use super::TrainError;
use crate::autodiff::Tape;
use crate::model::{image_loss_on, Binder, Hierarchy, ParamSet};
use crate::rng::{NormalRng, RngState};
use crate::spectral::decompose_dofs;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 3e-4,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(TrainError::Config(format!(
                "clip norm {} must be positive",
                self.clip_norm
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            (
                "train.learning_rate".into(),
                format!("{:?}", self.learning_rate),
            ),
            ("train.clip_norm".into(), format!("{:?}", self.clip_norm)),
            ("train.seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, TrainError> {
        fn get<T: std::str::FromStr>(
            p: &BTreeMap<String, String>,
            k: &str,
        ) -> Result<T, TrainError> {
            p.get(k)
                .ok_or_else(|| TrainError::Format(format!("missing key {k}")))?
                .parse()
                .map_err(|_| TrainError::Format(format!("invalid value for {k}")))
        }
        Ok(Self {
            epochs: get(pairs, "train.epochs")?,
            batch_size: get(pairs, "train.batch_size")?,
            learning_rate: get(pairs, "train.learning_rate")?,
            clip_norm: get(pairs, "train.clip_norm")?,
            seed: get(pairs, "train.seed")?,
        })
    }
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-image loss `(0.5 ‖x − x̂‖² + Σ KL) / D` over the epoch.
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    /// Optimizer steps taken.
    pub step: u64,
    /// State of the shuffling generator after the last epoch.
    pub rng_state: RngState,
}

impl TrainOutcome {
    pub const CSV_HEADER: &'static str = "epoch,loss,recon,kl,grad_norm";

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.6e}\n",
                e.epoch, e.loss, e.recon, e.kl, e.grad_norm
            ));
        }
        out
    }
}

/// Loss and parameter gradients of one image.
fn image_gradients(
    model: &Hierarchy,
    x: &Tensor,
    targets: &[Vec<f64>],
    rng: &mut NormalRng,
) -> Result<(f64, f64, f64, Vec<Tensor>), TrainError> {
    let tape = Tape::new();
    let binder = Binder::new(&tape, model.params(), true);
    let (loss, parts) = image_loss_on(model, &binder, x, targets, rng)?;
    let value = loss.item().map_err(|e| TrainError::Model(e.into()))?;
    if !value.is_finite() {
        return Err(TrainError::Diverged { step: 0 });
    }
    let grads = tape
        .backward(loss)
        .map_err(|e| TrainError::Model(e.into()))?;
    Ok((value, parts.recon, parts.kl_total(), binder.collect(&grads)))
}

/// Trains with Adam on mini-batches, one reparameterized sample per image.
///
/// Every random draw comes from a stream tagged by `(seed, epoch, image)`, so
/// a run is a pure function of the model, data and config. On a non-finite
/// loss or gradient the parameters are restored to the last finite step and
/// [`TrainError::Diverged`] is returned.
pub fn train(
    model: &mut Hierarchy,
    data: &[Tensor],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let partition = model.partition().clone();
    let targets: Vec<Vec<Vec<f64>>> = data
        .iter()
        .map(|x| decompose_dofs(x, &partition))
        .collect::<Result<_, _>>()
        .map_err(|e| TrainError::Model(e.into()))?;
    let d = model.pixels() as f64;
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffler = NormalRng::tagged(cfg.seed, &[0x7a1]);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut last_good: ParamSet = model.params().clone();

    for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        let (mut loss_sum, mut recon_sum, mut kl_sum, mut norm_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let mut rng = NormalRng::tagged(cfg.seed, &[epoch as u64, i as u64]);
                let step = adam.steps();
                let (loss, recon, kl, grads) =
                    image_gradients(model, &data[i], &targets[i], &mut rng)
                        .map_err(|e| match e {
                            TrainError::Diverged { .. } => TrainError::Diverged { step },
                            other => other,
                        })
                        .inspect_err(|_| *model.params_mut() = last_good.clone())?;
                loss_sum += loss;
                recon_sum += recon / d;
                kl_sum += kl / d;
                acc = Some(match acc {
                    None => grads,
                    Some(mut a) => {
                        for (x, g) in a.iter_mut().zip(&grads) {
                            for (p, q) in x.data_mut().iter_mut().zip(g.data()) {
                                *p += q;
                            }
                        }
                        a
                    }
                });
            }
            let mut grads = acc.expect("chunks are non-empty");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                *model.params_mut() = last_good;
                return Err(TrainError::Diverged { step: adam.steps() });
            }
            norm_sum += norm;
            batches += 1;
            adam.update(model.params_mut(), &grads);
            last_good = model.params().clone();
        }
        let n = data.len() as f64;
        epochs.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n,
            recon: recon_sum / n,
            kl: kl_sum / n,
            grad_norm: norm_sum / batches as f64,
        });
    }
    Ok(TrainOutcome {
        epochs,
        step: adam.steps(),
        rng_state: shuffler.state(),
    })
}
