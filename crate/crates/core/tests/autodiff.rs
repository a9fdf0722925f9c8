//! Reverse-mode gradients of every primitive against central differences.

mod common;

use std::sync::Arc;

use common::{fd_grad, rel_err};
use iahvae::autodiff::{LinearMap, Tape, Var};
use iahvae::rng::NormalRng;
use iahvae::tensor::Tensor;
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Dense matrix as a tape operator.
struct Dense {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
}

impl LinearMap for Dense {
    fn input_len(&self) -> usize {
        self.cols
    }
    fn output_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..self.cols)
                .map(|c| self.a[r * self.cols + c] * input[c])
                .sum();
        }
    }
    fn adjoint(&self, grad: &[f64], out: &mut [f64]) {
        for (r, g) in grad.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.a[r * self.cols + c] * g;
            }
        }
    }
}

/// Checks the tape gradient of `f(x) · w` (with fixed random `w`) against
/// central differences.
fn check(x: &Tensor, seed: u64, f: impl for<'t> Fn(Var<'t>) -> Var<'t>) {
    let weights = |shape: &[usize]| NormalRng::new(seed, 7).normal_tensor(shape);
    let eval = |x: &Tensor| -> f64 {
        let tape = Tape::new();
        let y = f(tape.constant(x.clone()));
        let w = weights(&y.shape());
        y.to_tensor()
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let y = f(xv);
    let w = tape.constant(weights(&y.shape()));
    let loss = y.mul(w).unwrap().sum();
    let grads = tape.backward(loss).unwrap();
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let numeric = fd_grad(x, H, eval);
    for (i, (a, n)) in analytic.data().iter().zip(&numeric).enumerate() {
        assert!(
            rel_err(*a, *n, 1.0) < TOL,
            "entry {i}: analytic {a} numeric {n}"
        );
    }
}

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    NormalRng::new(seed, 1).normal_tensor(shape)
}

/// Keeps values at least `gap` away from the kinks in `points`.
fn away_from(x: Tensor, points: &[f64], gap: f64) -> Tensor {
    x.map(|v| {
        let mut v = v;
        for &p in points {
            if (v - p).abs() < gap {
                v = p + gap.copysign(v - p);
            }
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_primitives(seed in 0u64..10_000, n in 1usize..12) {
        let x = tensor(&[n, 3], seed);
        check(&x, seed, |v| v.swish());
        check(&x, seed, |v| v.exp());
        check(&x, seed, |v| v.square());
        check(&x, seed, |v| v.scale(-2.5).offset(0.75));
        check(&away_from(x.clone(), &[0.0], 1e-3), seed, |v| v.abs());
        check(&away_from(x.clone(), &[-0.5, 0.8], 1e-3), seed, |v| v.clamp(-0.5, 0.8));
        check(&x, seed, |v| v.sum());
    }

    #[test]
    fn binary_primitives_with_broadcast(seed in 0u64..10_000, n in 1usize..8, c in 1usize..5) {
        let x = tensor(&[n, c], seed);
        let other = tensor(&[n, c], seed + 1);
        let row = tensor(&[c], seed + 2);
        check(&x, seed, |v| v.add(v.tape().constant(other.clone())).unwrap());
        check(&x, seed, |v| v.sub(v.tape().constant(other.clone())).unwrap());
        check(&x, seed, |v| v.mul(v.tape().constant(other.clone())).unwrap());
        check(&x, seed, |v| v.mul(v).unwrap());
        // The broadcast operand receives the summed gradient.
        check(&row, seed, |r| r.tape().constant(x.clone()).add(r).unwrap());
        check(&row, seed, |r| r.tape().constant(x.clone()).mul(r).unwrap());
    }

    #[test]
    fn matmul_both_operands(seed in 0u64..10_000, m in 1usize..6, k in 1usize..6, n in 1usize..6) {
        let a = tensor(&[m, k], seed);
        let b = tensor(&[k, n], seed + 1);
        check(&a, seed, |v| v.matmul(v.tape().constant(b.clone())).unwrap());
        check(&b, seed, |v| v.tape().constant(a.clone()).matmul(v).unwrap());
    }

    #[test]
    fn layout_primitives(seed in 0u64..10_000, log in 1u32..4, c in 1usize..4) {
        let side = 1usize << log;
        let x = tensor(&[side * side, c], seed);
        let other = tensor(&[side * side, 2], seed + 1);
        check(&x, seed, |v| v.upsample2().unwrap());
        check(&x, seed, |v| v.avg_pool2().unwrap());
        check(&x, seed, |v| v.reshape(&[c, side * side]).unwrap());
        check(&x, seed, |v| v.concat_cols(v.tape().constant(other.clone())).unwrap());
        check(&x, seed, |v| v.tape().constant(other.clone()).concat_cols(v).unwrap());
        check(&x, seed, |v| v.slice_cols(c / 2, c - c / 2).unwrap());
    }

    #[test]
    fn linear_map_primitive(seed in 0u64..10_000, rows in 1usize..9, cols in 1usize..9) {
        let a = NormalRng::new(seed, 3).normal_tensor(&[rows * cols]).into_data();
        let map: Arc<dyn LinearMap> = Arc::new(Dense { rows, cols, a });
        let x = tensor(&[cols], seed);
        check(&x, seed, |v| v.linear_map(map.clone(), &[rows]).unwrap());
    }

    #[test]
    fn gradients_are_linear_in_the_loss(seed in 0u64..10_000, alpha in -3.0f64..3.0) {
        let x = tensor(&[4, 3], seed);
        let grad = |a: f64, b: f64| {
            let tape = Tape::new();
            let v = tape.var(x.clone());
            let f = v.swish().sum();
            let g = v.square().exp().scale(0.1).sum();
            let loss = f.scale(a).add(g.scale(b)).unwrap();
            tape.backward(loss).unwrap().get(v).unwrap().clone()
        };
        let (gf, gg, mix) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(alpha, 1.0));
        for i in 0..x.len() {
            let expect = alpha * gf.data()[i] + gg.data()[i];
            prop_assert!((mix.data()[i] - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn two_layer_network_gradient() {
    let x = tensor(&[5, 4], 11);
    let w1 = tensor(&[4, 6], 12);
    let w2 = tensor(&[6, 2], 13);
    let b1 = tensor(&[6], 14);
    // Gradient with respect to every parameter in turn.
    check(&w1, 1, |w| {
        let t = w.tape();
        t.constant(x.clone())
            .matmul(w)
            .unwrap()
            .add(t.constant(b1.clone()))
            .unwrap()
            .swish()
            .matmul(t.constant(w2.clone()))
            .unwrap()
    });
    check(&b1, 2, |b| {
        let t = b.tape();
        t.constant(x.clone())
            .matmul(t.constant(w1.clone()))
            .unwrap()
            .add(b)
            .unwrap()
            .swish()
            .matmul(t.constant(w2.clone()))
            .unwrap()
    });
    check(&x, 3, |v| {
        let t = v.tape();
        let h = v
            .matmul(t.constant(w1.clone()))
            .unwrap()
            .add(t.constant(b1.clone()))
            .unwrap()
            .swish();
        h.matmul(t.constant(w2.clone()))
            .unwrap()
            .add(v.slice_cols(0, 2).unwrap())
            .unwrap()
    });
}

#[test]
fn reused_variable_accumulates_gradient() {
    let tape = Tape::new();
    let x = tape.var(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    // d/dx (x·x + 3x) = 2x + 3
    let loss = x.mul(x).unwrap().add(x.scale(3.0)).unwrap().sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[5.0, -1.0, 4.0]);
}
