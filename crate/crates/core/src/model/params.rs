//! Named parameter storage and per-tape binding.

use std::cell::RefCell;

use crate::autodiff::{Gradients, Tape, Var};
use crate::rng::NormalRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Zeros,
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Scaled {
        fan_in: usize,
        gain: f64,
    },
}

impl Init {
    pub(crate) fn build(self, shape: &[usize], rng: &mut NormalRng) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Scaled { fan_in, gain } => {
                let std = gain / (fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| std * rng.standard_normal())
            }
        }
    }
}

/// Lazily places parameters on a tape, either as trainable leaves or as
/// constants. Only parameters actually used are copied.
pub struct Binder<'t, 'p> {
    tape: &'t Tape,
    params: &'p ParamSet,
    trainable: bool,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'t, 'p> Binder<'t, 'p> {
    pub fn new(tape: &'t Tape, params: &'p ParamSet, trainable: bool) -> Self {
        Self {
            tape,
            params,
            trainable,
            vars: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn constants(tape: &'t Tape, params: &'p ParamSet) -> Self {
        Self::new(tape, params, false)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| {
            let value = self.params.get(id).clone();
            if self.trainable {
                self.tape.var(value)
            } else {
                self.tape.constant(value)
            }
        })
    }

    /// Gradient per parameter; unused parameters get zeros.
    pub fn collect(&self, grads: &Gradients) -> Vec<Tensor> {
        let vars = self.vars.borrow();
        self.params
            .ids()
            .map(|id| {
                vars[id.0]
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape()))
            })
            .collect()
    }
}
