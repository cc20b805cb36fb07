//! Reverse-mode differentiation over a linear tape.
//!
//! Model code is written once against [`Backend`]. Running it on a [`Tape`]
//! records every primitive so [`Tape::backward`] can replay the chain rule;
//! running it on [`Eager`] evaluates the same kernels without recording.

use crate::error::{Error, Result};

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Evaluation strategy shared by the tape and the eager evaluator.
pub trait Backend {
    type V: Clone;

    /// A trainable leaf. The eager backend simply copies the tensor.
    fn param(&mut self, t: &Tensor) -> Self::V;
    /// A leaf that never receives a gradient.
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn min(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    /// `a[m,n] + row[n]` broadcast over rows.
    fn add_row(&mut self, a: &Self::V, row: &Self::V) -> Self::V;
    /// `a[m,n] * row[n]` broadcast over rows.
    fn mul_row(&mut self, a: &Self::V, row: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn add_scalar(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn unary(&mut self, a: &Self::V, f: Unary) -> Self::V;
    fn clamp(&mut self, a: &Self::V, lo: f64, hi: f64) -> Self::V;
    /// Sum of all entries as a `[1]` tensor.
    fn sum(&mut self, a: &Self::V) -> Self::V;
    /// Per-row sums, `[m,n] -> [m,1]`.
    fn sum_cols(&mut self, a: &Self::V) -> Self::V;
    fn slice_cols(&mut self, a: &Self::V, start: usize, width: usize) -> Self::V;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Self::V;

    fn mean(&mut self, a: &Self::V) -> Self::V {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(&s, 1.0 / n)
    }

    fn tanh(&mut self, a: &Self::V) -> Self::V {
        self.unary(a, Unary::Tanh)
    }

    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        self.unary(a, Unary::Sigmoid)
    }

    fn exp(&mut self, a: &Self::V) -> Self::V {
        self.unary(a, Unary::Exp)
    }

    fn square(&mut self, a: &Self::V) -> Self::V {
        self.unary(a, Unary::Square)
    }

    /// `1 - a`.
    fn one_minus(&mut self, a: &Self::V) -> Self::V {
        let n = self.scale(a, -1.0);
        self.add_scalar(&n, 1.0)
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Elu,
    Exp,
    Softplus,
    Square,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Exp => x.exp(),
            Unary::Softplus => softplus(x),
            Unary::Square => x * x,
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Exp => y,
            Unary::Softplus => sigmoid(x),
            Unary::Square => 2.0 * x,
        }
    }
}

fn broadcast_row(a: &Tensor, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n = a.cols();
    assert_eq!(row.len(), n, "row broadcast width");
    let r = row.data();
    let data = a.data().chunks(n).flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y))).collect();
    Tensor::from_raw(a.shape().to_vec(), data)
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let n = g.cols();
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn row_sums(a: &Tensor) -> Tensor {
    let n = a.cols();
    let data: Vec<f64> = a.data().chunks(n).map(|c| c.iter().sum()).collect();
    Tensor::from_raw(vec![a.rows(), 1], data)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: shapes {:?} vs {:?}", a.shape(), b.shape());
}

/// Immediate evaluation with no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type V = Tensor;

    fn param(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }
    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        matmul(a, b).expect("matmul shapes")
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        same_shape(a, b, "add");
        a.zip_map(b, |x, y| x + y)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        same_shape(a, b, "sub");
        a.zip_map(b, |x, y| x - y)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        same_shape(a, b, "mul");
        a.zip_map(b, |x, y| x * y)
    }
    fn min(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        same_shape(a, b, "min");
        a.zip_map(b, f64::min)
    }
    fn add_row(&mut self, a: &Tensor, row: &Tensor) -> Tensor {
        broadcast_row(a, row, |x, y| x + y)
    }
    fn mul_row(&mut self, a: &Tensor, row: &Tensor) -> Tensor {
        broadcast_row(a, row, |x, y| x * y)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.map(|x| x * c)
    }
    fn add_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.map(|x| x + c)
    }
    fn unary(&mut self, a: &Tensor, f: Unary) -> Tensor {
        a.map(|x| f.apply(x))
    }
    fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        a.map(|x| x.clamp(lo, hi))
    }
    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum())
    }
    fn sum_cols(&mut self, a: &Tensor) -> Tensor {
        row_sums(a)
    }
    fn slice_cols(&mut self, a: &Tensor, start: usize, width: usize) -> Tensor {
        a.slice_cols(start, width)
    }
    fn concat_cols(&mut self, parts: &[Tensor]) -> Tensor {
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_cols(&refs)
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Unary(usize, Unary),
    Clamp(usize, f64, f64),
    Sum(usize),
    SumCols(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Nodes are appended in evaluation order, which is a
/// topological order, so the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when `v` was unreachable from the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Min(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => self.nodes[*a].requires_grad || self.nodes[*b].requires_grad,
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Unary(a, _)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::SumCols(a)
            | Op::SliceCols(a, _) => self.nodes[*a].requires_grad,
            Op::ConcatCols(parts) => parts.iter().any(|&p| self.nodes[p].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_raw(lv.shape().to_vec(), vec![1.0]));

        fn acc(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad && !matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        acc(&mut grads[a], matmul_nt(&g, self.val(b)));
                    }
                    if self.nodes[b].requires_grad {
                        acc(&mut grads[b], matmul_tn(self.val(a), &g));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*a], g.clone());
                    acc(&mut grads[*b], g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[*a], g.clone());
                    acc(&mut grads[*b], g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut grads[a], g.zip_map(self.val(b), |x, y| x * y));
                    acc(&mut grads[b], g.zip_map(self.val(a), |x, y| x * y));
                }
                Op::Min(a, b) => {
                    let (a, b) = (*a, *b);
                    let (av, bv) = (self.val(a).data(), self.val(b).data());
                    let mut ga = g.clone();
                    let mut gb = g;
                    for k in 0..av.len() {
                        if av[k] <= bv[k] {
                            gb.data_mut()[k] = 0.0;
                        } else {
                            ga.data_mut()[k] = 0.0;
                        }
                    }
                    acc(&mut grads[a], ga);
                    acc(&mut grads[b], gb);
                }
                Op::AddRow(a, row) => {
                    let shape = self.val(*row).shape().to_vec();
                    acc(&mut grads[*row], Tensor::from_raw(shape, column_sums(&g)));
                    acc(&mut grads[*a], g);
                }
                Op::MulRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let shape = self.val(row).shape().to_vec();
                    let ga = broadcast_row(&g, self.val(row), |x, y| x * y);
                    let prod = g.zip_map(self.val(a), |x, y| x * y);
                    acc(&mut grads[row], Tensor::from_raw(shape, column_sums(&prod)));
                    acc(&mut grads[a], ga);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads[*a], g.map(|v| v * c));
                }
                Op::AddScalar(a) => acc(&mut grads[*a], g),
                Op::Unary(a, f) => {
                    let x = self.val(*a).data();
                    let data = g
                        .data()
                        .iter()
                        .zip(x.iter().zip(y.data()))
                        .map(|(&gv, (&xv, &yv))| gv * f.derivative(xv, yv))
                        .collect();
                    acc(&mut grads[*a], Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.val(*a);
                    let gx = g.zip_map(x, |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 });
                    acc(&mut grads[*a], gx);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    acc(&mut grads[*a], Tensor::full(self.val(*a).shape(), s));
                }
                Op::SumCols(a) => {
                    let x = self.val(*a);
                    let n = x.cols();
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                    acc(&mut grads[*a], Tensor::from_raw(x.shape().to_vec(), data));
                }
                Op::SliceCols(a, start) => {
                    let x = self.val(*a);
                    let (r, c, w) = (x.rows(), x.cols(), g.cols());
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        data[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                    }
                    acc(&mut grads[*a], Tensor::from_raw(x.shape().to_vec(), data));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.val(p).cols();
                        if self.nodes[p].requires_grad {
                            acc(&mut grads[p], g.slice_cols(start, w));
                        }
                        start += w;
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Grads { grads, shapes })
    }
}

impl Backend for Tape {
    type V = Var;

    fn param(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node { value: t.clone(), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }
    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = matmul(self.val(a.0), self.val(b.0)).expect("matmul shapes");
        self.push(v, Op::MatMul(a.0, b.0))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.add(self.val(a.0), self.val(b.0));
        self.push(v, Op::Add(a.0, b.0))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.sub(self.val(a.0), self.val(b.0));
        self.push(v, Op::Sub(a.0, b.0))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.mul(self.val(a.0), self.val(b.0));
        self.push(v, Op::Mul(a.0, b.0))
    }
    fn min(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.min(self.val(a.0), self.val(b.0));
        self.push(v, Op::Min(a.0, b.0))
    }
    fn add_row(&mut self, a: &Var, row: &Var) -> Var {
        let v = Eager.add_row(self.val(a.0), self.val(row.0));
        self.push(v, Op::AddRow(a.0, row.0))
    }
    fn mul_row(&mut self, a: &Var, row: &Var) -> Var {
        let v = Eager.mul_row(self.val(a.0), self.val(row.0));
        self.push(v, Op::MulRow(a.0, row.0))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = Eager.scale(self.val(a.0), c);
        self.push(v, Op::Scale(a.0, c))
    }
    fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        let v = Eager.add_scalar(self.val(a.0), c);
        self.push(v, Op::AddScalar(a.0))
    }
    fn unary(&mut self, a: &Var, f: Unary) -> Var {
        let v = Eager.unary(self.val(a.0), f);
        self.push(v, Op::Unary(a.0, f))
    }
    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let v = Eager.clamp(self.val(a.0), lo, hi);
        self.push(v, Op::Clamp(a.0, lo, hi))
    }
    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.val(a.0).sum());
        self.push(v, Op::Sum(a.0))
    }
    fn sum_cols(&mut self, a: &Var) -> Var {
        let v = row_sums(self.val(a.0));
        self.push(v, Op::SumCols(a.0))
    }
    fn slice_cols(&mut self, a: &Var, start: usize, width: usize) -> Var {
        let v = self.val(a.0).slice_cols(start, width);
        self.push(v, Op::SliceCols(a.0, start))
    }
    fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(p.0)).collect();
        let v = Tensor::concat_cols(&refs);
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut tape = Tape::new();
        let w = tape.param(&t(&[vec![0.3], vec![-0.7], vec![2.0]]));
        let x = tape.constant(t(&[vec![1.0, 2.0, 3.0]]));
        let y = tape.matmul(&x, &w);
        let loss = tape.sum(&y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn unreachable_parameter_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::scalar(1.5));
        let p = tape.param(&Tensor::scalar(4.0));
        let sq = tape.square(&w);
        let loss = tape.sum(&sq);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.get_or_zeros(p).data(), &[0.0]);
        assert_eq!(g.get(w).unwrap().item(), 3.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(&t(&[vec![1.0, 2.0]]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates_like_duplicated_subgraph() {
        // f(w) = sum(tanh(w) * tanh(w)) through one shared node ...
        let w0 = t(&[vec![0.2, -0.4, 1.1]]);
        let mut tape = Tape::new();
        let w = tape.param(&w0);
        let h = tape.tanh(&w);
        let p = tape.mul(&h, &h);
        let loss = tape.sum(&p);
        let shared = tape.backward(loss).unwrap().get(w).unwrap().clone();
        // ... and through two independently built copies of tanh(w).
        let mut tape = Tape::new();
        let w = tape.param(&w0);
        let h1 = tape.tanh(&w);
        let h2 = tape.tanh(&w);
        let p = tape.mul(&h1, &h2);
        let loss = tape.sum(&p);
        let dup = tape.backward(loss).unwrap().get(w).unwrap().clone();
        for (a, b) in shared.data().iter().zip(dup.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn eager_and_tape_agree_bitwise() {
        let a = t(&[vec![0.1, -2.0], vec![0.5, 0.25]]);
        let r = t(&[vec![1.0, -1.0]]);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let rv = tape.param(&r);
        let s = tape.add_row(&av, &rv);
        let e = tape.unary(&s, Unary::Elu);
        let mut eager = Eager;
        let s2 = eager.add_row(&a, &r);
        let e2 = eager.unary(&s2, Unary::Elu);
        assert_eq!(tape.value(&e), &e2);
    }
}
