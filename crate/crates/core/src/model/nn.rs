//! Affine layers and residual blocks over `[positions, channels]` tensors.

use super::params::{Binder, Init, ParamId, ParamSet};
use crate::autodiff::Var;
use crate::rng::NormalRng;
use crate::tensor::TensorError;

/// `x W + b`, applied independently at every position.
#[derive(Clone, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub(crate) fn new(
        params: &mut ParamSet,
        rng: &mut NormalRng,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
    ) -> Self {
        let w = params.push(format!("{name}.w"), init.build(&[inputs, outputs], rng));
        let b = params.push(format!("{name}.b"), Init::Zeros.build(&[outputs], rng));
        Self { w, b }
    }

    pub fn forward<'t>(&self, p: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.matmul(p.get(self.w))?.add(p.get(self.b))
    }
}

/// `x + fc2(swish(fc1(x)))` with an outer/inner channel bottleneck.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub fc1: Affine,
    pub fc2: Affine,
}

/// Gain of the second residual layer, keeping deep stacks near identity.
const RESIDUAL_GAIN: f64 = 0.25;

impl ResBlock {
    pub(crate) fn new(
        params: &mut ParamSet,
        rng: &mut NormalRng,
        name: &str,
        outer: usize,
        inner: usize,
    ) -> Self {
        let fc1 = Affine::new(
            params,
            rng,
            &format!("{name}.fc1"),
            outer,
            inner,
            Init::Scaled {
                fan_in: outer,
                gain: 1.0,
            },
        );
        let fc2 = Affine::new(
            params,
            rng,
            &format!("{name}.fc2"),
            inner,
            outer,
            Init::Scaled {
                fan_in: inner,
                gain: RESIDUAL_GAIN,
            },
        );
        Self { fc1, fc2 }
    }

    pub fn forward<'t>(&self, p: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let h = self.fc1.forward(p, x)?.swish();
        x.add(self.fc2.forward(p, h)?)
    }
}
