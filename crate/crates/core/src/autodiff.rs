//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar replays the records in reverse, accumulates
//! gradients into the leaves created with [`Tape::var`], and clears the tape.
//!
//! Nodes whose inputs are all constants are marked as not needing gradients,
//! so frozen parameters cost nothing on the backward pass.
//!
//! ```
//! use iahvae::autodiff::Tape;
//! use iahvae::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let z = tape.var(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = z.mul(z).unwrap().sum().scale(0.5);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(z).unwrap().data(), &[1.0, -2.0, 0.5]);
//! ```

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::sync::Arc;

use crate::tensor::{Tensor, TensorError};

/// A fixed linear operator usable as a tape primitive.
///
/// `adjoint` must accumulate `Aᵀ g` into `out` (not overwrite it).
pub trait LinearMap: Send + Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, input: &[f64], out: &mut [f64]);
    fn adjoint(&self, grad: &[f64], out: &mut [f64]);
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Swish(usize),
    Exp(usize),
    Abs(usize),
    Sum(usize),
    Clamp(usize, f64, f64),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    Upsample2(usize, usize),
    AvgPool2(usize, usize),
    Reshape(usize),
    Linear(usize, Arc<dyn LinearMap>),
}

impl Op {
    fn inputs(&self) -> (Option<usize>, Option<usize>) {
        use Op::*;
        match *self {
            Leaf => (None, None),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | ConcatCols(a, b) => {
                (Some(a), Some(b))
            }
            Scale(a, _)
            | Offset(a)
            | Swish(a)
            | Exp(a)
            | Abs(a)
            | Sum(a)
            | Clamp(a, _, _)
            | SliceCols(a, _)
            | Upsample2(a, _)
            | AvgPool2(a, _)
            | Reshape(a)
            | Linear(a, _) => (Some(a), None),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive applications for one computation graph.
///
/// A tape is single-threaded; build one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    generation: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    generation: u64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients of the leaves of a tape after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    generation: u64,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::var`]. `None` for constants
    /// or leaves the loss does not depend on.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        assert_eq!(
            var.generation, self.generation,
            "variable belongs to a different tape generation"
        );
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    if a == b || a.ends_with(b) {
        Ok(a.to_vec())
    } else if b.ends_with(a) {
        Ok(b.to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Elementwise kernel over two operands where the shorter one is a trailing
/// suffix of the output (so its index is `i % len`).
fn broadcast_zip(a: &[f64], b: &[f64], out_len: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let mut out = Vec::with_capacity(out_len);
    if a.len() == out_len {
        for chunk in a.chunks(b.len()) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
    } else {
        for chunk in b.chunks(a.len()) {
            out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
    }
    out
}

/// Adds `g * scale(i)` into a buffer of length `dst.len()`, summing over the
/// broadcast blocks when `dst` is shorter than `g`.
fn reduce_into(dst: &mut [f64], g: &[f64], weight: impl Fn(usize) -> f64) {
    let n = dst.len();
    for (i, gi) in g.iter().enumerate() {
        dst[i % n] += gi * weight(i);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    // SAFETY: all extents are checked by the callers against the buffer
    // lengths; strides describe row-major or transposed row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of records currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient on [`Tape::backward`].
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let (a, b) = op.inputs();
        assert!(
            a.is_none_or(|a| a < id) && b.is_none_or(|b| b < id),
            "tape records must reference earlier records"
        );
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id,
            generation: self.generation.get(),
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Back-propagates from a scalar loss. Every leaf created with
    /// [`Tape::var`] that the loss depends on receives its accumulated
    /// gradient. The tape is cleared afterwards; variables recorded on it
    /// become stale.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        loss.check();
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let generation = self.generation.get();
        self.generation.set(generation + 1);

        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.value.is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            backprop_node(&nodes, id, &g, &mut grads);
        }

        Ok(Gradients {
            grads: leaf_grads,
            generation,
        })
    }
}

fn grad_buf<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'g mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()])
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let want = |i: usize| nodes[i].needs_grad;
    let val = |i: usize| nodes[i].value.data();
    match node.op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) => {
            if want(a) {
                reduce_into(grad_buf(grads, nodes, a), g, |_| 1.0);
            }
            if want(b) {
                reduce_into(grad_buf(grads, nodes, b), g, |_| 1.0);
            }
        }
        Op::Sub(a, b) => {
            if want(a) {
                reduce_into(grad_buf(grads, nodes, a), g, |_| 1.0);
            }
            if want(b) {
                reduce_into(grad_buf(grads, nodes, b), g, |_| -1.0);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            if want(a) {
                let n = bv.len();
                reduce_into(grad_buf(grads, nodes, a), g, |i| bv[i % n]);
            }
            if want(b) {
                let n = av.len();
                reduce_into(grad_buf(grads, nodes, b), g, |i| av[i % n]);
            }
        }
        Op::Scale(a, c) => {
            let ga = grad_buf(grads, nodes, a);
            for (d, gi) in ga.iter_mut().zip(g) {
                *d += c * gi;
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            let ga = grad_buf(grads, nodes, a);
            for (d, gi) in ga.iter_mut().zip(g) {
                *d += gi;
            }
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if want(a) {
                let bv = nodes[b].value.data();
                let ga = grad_buf(grads, nodes, a);
                // ∂a = g · bᵀ
                gemm(m, n, k, (g, n as isize, 1), (bv, 1, n as isize), 1.0, ga);
            }
            if want(b) {
                let av = nodes[a].value.data();
                let gb = grad_buf(grads, nodes, b);
                // ∂b = aᵀ · g
                gemm(k, m, n, (av, 1, k as isize), (g, n as isize, 1), 1.0, gb);
            }
        }
        Op::Swish(a) => {
            let x = val(a);
            let ga = grad_buf(grads, nodes, a);
            for ((d, gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                let s = sigmoid(xi);
                *d += gi * s * (1.0 + xi * (1.0 - s));
            }
        }
        Op::Exp(a) => {
            let y = node.value.data();
            let ga = grad_buf(grads, nodes, a);
            for ((d, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                *d += gi * yi;
            }
        }
        Op::Abs(a) => {
            let x = val(a);
            let ga = grad_buf(grads, nodes, a);
            for ((d, gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                if xi > 0.0 {
                    *d += gi;
                } else if xi < 0.0 {
                    *d -= gi;
                }
            }
        }
        Op::Sum(a) => {
            let ga = grad_buf(grads, nodes, a);
            for d in ga.iter_mut() {
                *d += g[0];
            }
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(a);
            let ga = grad_buf(grads, nodes, a);
            for ((d, gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                if (lo..=hi).contains(&xi) {
                    *d += gi;
                }
            }
        }
        Op::ConcatCols(a, b) => {
            let p = nodes[a].value.shape()[1];
            let q = nodes[b].value.shape()[1];
            if want(a) {
                let ga = grad_buf(grads, nodes, a);
                for (row, grow) in ga.chunks_mut(p).zip(g.chunks(p + q)) {
                    for (d, gi) in row.iter_mut().zip(&grow[..p]) {
                        *d += gi;
                    }
                }
            }
            if want(b) {
                let gb = grad_buf(grads, nodes, b);
                for (row, grow) in gb.chunks_mut(q).zip(g.chunks(p + q)) {
                    for (d, gi) in row.iter_mut().zip(&grow[p..]) {
                        *d += gi;
                    }
                }
            }
        }
        Op::SliceCols(a, start) => {
            let c = nodes[a].value.shape()[1];
            let w = node.value.shape()[1];
            let ga = grad_buf(grads, nodes, a);
            for (row, grow) in ga.chunks_mut(c).zip(g.chunks(w)) {
                for (d, gi) in row[start..start + w].iter_mut().zip(grow) {
                    *d += gi;
                }
            }
        }
        Op::Upsample2(a, side) => {
            let c = nodes[a].value.shape()[1];
            let ga = grad_buf(grads, nodes, a);
            let out_side = side * 2;
            for y in 0..out_side {
                for x in 0..out_side {
                    let src = ((y / 2) * side + x / 2) * c;
                    let dst = (y * out_side + x) * c;
                    for ch in 0..c {
                        ga[src + ch] += g[dst + ch];
                    }
                }
            }
        }
        Op::AvgPool2(a, side) => {
            let c = nodes[a].value.shape()[1];
            let ga = grad_buf(grads, nodes, a);
            let half = side / 2;
            for y in 0..side {
                for x in 0..side {
                    let dst = ((y / 2) * half + x / 2) * c;
                    let src = (y * side + x) * c;
                    for ch in 0..c {
                        ga[src + ch] += 0.25 * g[dst + ch];
                    }
                }
            }
        }
        Op::Linear(a, ref map) => {
            let ga = grad_buf(grads, nodes, a);
            map.adjoint(g, ga);
        }
    }
}

impl<'t> Var<'t> {
    fn check(&self) {
        assert_eq!(
            self.generation,
            self.tape.generation.get(),
            "variable used after its tape was cleared by backward"
        );
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
        other.check();
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.check();
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64, TensorError> {
        self.value().item()
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        self.check();
        let out = f(&self.value());
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, op, needs)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>, TensorError> {
        self.check();
        self.same_tape(&other);
        let out = {
            let (a, b) = (self.value(), other.value());
            let shape = broadcast_shape(name, a.shape(), b.shape())?;
            let n = shape.iter().product();
            Tensor::from_parts(shape, broadcast_zip(a.data(), b.data(), n, f))
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, op, needs))
    }

    /// Elementwise sum; the shorter operand broadcasts if its shape is a
    /// trailing suffix of the other's.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |t| t.map(|v| v * c))
    }

    pub fn offset(&self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |t| t.map(|v| v + c))
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.check();
        self.same_tape(&other);
        let out = {
            let (a, b) = (self.value(), other.value());
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut c = vec![0.0; m * n];
            gemm(
                m,
                k,
                n,
                (a.data(), k as isize, 1),
                (b.data(), n as isize, 1),
                0.0,
                &mut c,
            );
            Tensor::from_parts(vec![m, n], c)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), needs))
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&self) -> Var<'t> {
        self.unary(Op::Swish(self.id), |t| t.map(|x| x * sigmoid(x)))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |t| t.map(f64::exp))
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |t| t.map(f64::abs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |t| Tensor::scalar(t.sum()))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |t| t.map(|v| v.clamp(lo, hi)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        self.check();
        let out = self.value().reshape(shape)?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Reshape(self.id), needs))
    }

    /// Concatenates two `[n, p]` and `[n, q]` matrices into `[n, p + q]`.
    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.check();
        self.same_tape(&other);
        let out = {
            let (a, b) = (self.value(), other.value());
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let (p, q) = (sa[1], sb[1]);
            let mut data = Vec::with_capacity(sa[0] * (p + q));
            for (ra, rb) in a.data().chunks(p).zip(b.data().chunks(q)) {
                data.extend_from_slice(ra);
                data.extend_from_slice(rb);
            }
            Tensor::from_parts(vec![sa[0], p + q], data)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self
            .tape
            .push(out, Op::ConcatCols(self.id, other.id), needs))
    }

    /// Columns `start..start + width` of an `[n, c]` matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>, TensorError> {
        self.check();
        let out = {
            let a = self.value();
            let s = a.shape();
            if s.len() != 2 || start + width > s[1] || width == 0 {
                return Err(TensorError::ShapeMismatch {
                    op: "slice_cols",
                    lhs: s.to_vec(),
                    rhs: vec![start, width],
                });
            }
            let mut data = Vec::with_capacity(s[0] * width);
            for row in a.data().chunks(s[1]) {
                data.extend_from_slice(&row[start..start + width]);
            }
            Tensor::from_parts(vec![s[0], width], data)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::SliceCols(self.id, start), needs))
    }

    fn square_side(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        let s = self.shape();
        let side = (s.first().copied().unwrap_or(0) as f64).sqrt() as usize;
        if s.len() != 2 || side * side != s[0] {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                shape: s,
            });
        }
        Ok((side, s[1]))
    }

    /// Nearest-neighbour 2× upsampling of a `[side², c]` position-major grid.
    pub fn upsample2(&self) -> Result<Var<'t>, TensorError> {
        let (side, c) = self.square_side("upsample2")?;
        let out = {
            let a = self.value();
            let src = a.data();
            let out_side = side * 2;
            let mut data = vec![0.0; out_side * out_side * c];
            for y in 0..out_side {
                for x in 0..out_side {
                    let s = ((y / 2) * side + x / 2) * c;
                    let d = (y * out_side + x) * c;
                    data[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
            Tensor::from_parts(vec![out_side * out_side, c], data)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Upsample2(self.id, side), needs))
    }

    /// 2×2 average pooling of a `[side², c]` position-major grid.
    pub fn avg_pool2(&self) -> Result<Var<'t>, TensorError> {
        let (side, c) = self.square_side("avg_pool2")?;
        if side < 2 || side % 2 != 0 {
            return Err(TensorError::Rank {
                op: "avg_pool2",
                expected: 2,
                shape: self.shape(),
            });
        }
        let out = {
            let a = self.value();
            let src = a.data();
            let half = side / 2;
            let mut data = vec![0.0; half * half * c];
            for y in 0..side {
                for x in 0..side {
                    let d = ((y / 2) * half + x / 2) * c;
                    let s = (y * side + x) * c;
                    for ch in 0..c {
                        data[d + ch] += 0.25 * src[s + ch];
                    }
                }
            }
            Tensor::from_parts(vec![half * half, c], data)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::AvgPool2(self.id, side), needs))
    }

    /// Applies a fixed linear operator to the flattened value.
    pub fn linear_map(
        &self,
        map: Arc<dyn LinearMap>,
        out_shape: &[usize],
    ) -> Result<Var<'t>, TensorError> {
        self.check();
        let out = {
            let a = self.value();
            if a.len() != map.input_len() || out_shape.iter().product::<usize>() != map.output_len()
            {
                return Err(TensorError::ShapeMismatch {
                    op: "linear_map",
                    lhs: a.shape().to_vec(),
                    rhs: out_shape.to_vec(),
                });
            }
            let mut data = vec![0.0; map.output_len()];
            map.apply(a.data(), &mut data);
            Tensor::from_parts(out_shape.to_vec(), data)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Linear(self.id, map), needs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_values_and_identity() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let z = tape.constant(t(&[2], &[0.0, 0.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        assert_eq!(a.add(z).unwrap().value().data(), &[1.0, 2.0]);
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_broadcasts_trailing_suffix() {
        let tape = Tape::new();
        let a = tape.var(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let bias = tape.var(t(&[3], &[10.0, 20.0, 30.0]));
        let y = a.add(bias).unwrap();
        assert_eq!(y.value().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.get(bias).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { .. })));
        let m = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(a.matmul(a).is_err());
        assert!(a.matmul(m).is_ok());
    }

    #[test]
    fn matmul_identity_and_selection() {
        let tape = Tape::new();
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(eye.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let row = tape.constant(t(&[1, 2], &[1.0, 0.0]));
        let col = tape.constant(t(&[2, 1], &[2.0, 5.0]));
        let out = row.matmul(col).unwrap();
        assert_eq!(out.shape(), vec![1, 1]);
        assert_eq!(out.value().data(), &[2.0]);
    }

    #[test]
    fn swish_limits() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 40.0]));
        let y = x.swish();
        assert_eq!(y.value().data()[0], 0.0);
        assert!((y.value().data()[1] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn linear_and_quadratic_gradients() {
        let tape = Tape::new();
        let z = tape.var(t(&[3], &[0.3, -1.2, 2.0]));
        let grads = tape.backward(z.sum()).unwrap();
        assert_eq!(grads.get(z).unwrap().data(), &[1.0; 3]);

        let tape = Tape::new();
        let z = tape.var(t(&[3], &[0.3, -1.2, 2.0]));
        let grads = tape.backward(z.square().sum().scale(0.5)).unwrap();
        assert_eq!(grads.get(z).unwrap().data(), &[0.3, -1.2, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_clears_tape() {
        let tape = Tape::new();
        let z = tape.var(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(z), Err(TensorError::NotScalar(_))));
        assert!(tape.is_empty());
    }

    #[test]
    #[should_panic(expected = "tape was cleared")]
    fn stale_variables_panic() {
        let tape = Tape::new();
        let z = tape.var(Tensor::zeros(&[1]));
        let _ = tape.backward(z.sum()).unwrap();
        let _ = z.exp();
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let w = tape.constant(t(&[2], &[1.0, 2.0]));
        let z = tape.var(t(&[2], &[3.0, 4.0]));
        let grads = tape.backward(w.mul(z).unwrap().sum()).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(z).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[4, 3], |i| i as f64));
        let y = x.upsample2().unwrap().avg_pool2().unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }
}
