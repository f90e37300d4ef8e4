//! Tape of recorded operations and the reverse sweep over it.
//!
//! Every operation appends a node holding its output value, the ids of its
//! inputs and whatever it saved for the backward pass. Node ids only ever
//! grow, so the tape is topologically ordered by construction.

use crate::error::{dim_err, Error, Result};
use crate::nn::tensor::{split_axis, Tensor};
use crate::nn::{conv, loss, norm, recurrent, shape};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddBias,
    Scale(f64),
    Relu,
    Sigmoid,
    Tanh,
    Sum,
    ScaleRows,
    MatMul,
    Linear,
    Bmm { trans_b: bool },
    Softmax { axis: usize },
    Shape(shape::ShapeOp),
    Conv1d(conv::Conv1dSaved),
    BatchNorm(norm::BatchNormSaved),
    Dropout { mask: Vec<f64> },
    Lstm(recurrent::LstmSaved),
    Gru(recurrent::GruSaved),
    CrossEntropy(loss::CrossEntropySaved),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddBias => "add_bias",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Sum => "sum",
            Op::ScaleRows => "scale_rows",
            Op::MatMul => "matmul",
            Op::Linear => "linear",
            Op::Bmm { .. } => "bmm",
            Op::Softmax { .. } => "softmax",
            Op::Shape(s) => s.name(),
            Op::Conv1d(_) => "conv1d_same",
            Op::BatchNorm(_) => "batchnorm1d",
            Op::Dropout { .. } => "dropout",
            Op::Lstm(_) => "lstm",
            Op::Gru(_) => "gru",
            Op::CrossEntropy(_) => "weighted_cross_entropy",
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Var>,
    pub(crate) requires_grad: bool,
}

/// Gradient contributions produced by one node's backward rule, keyed by
/// input position.
pub(crate) type InputGrads = Vec<(usize, Vec<f64>)>;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(usize, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a tensor that receives a gradient on [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Records a trainable leaf tied to slot `index` of a parameter store.
    pub(crate) fn bind(&mut self, index: usize, value: Tensor) -> Var {
        let v = self.push_leaf(value, true);
        self.bindings.push((index, v));
        v
    }

    pub(crate) fn bindings(&self) -> &[(usize, Var)] {
        &self.bindings
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, inputs: Vec::new(), requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, inputs, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward loss with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    /// Reverse sweep from a scalar `loss`; gradients accumulate additively
    /// when a node feeds several consumers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = self.grads[i].as_deref() else { continue };
            let contributions = self.node_backward(i, gout);
            for (pos, g) in contributions {
                let input = self.nodes[i].inputs[pos];
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut self.grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, gout: &[f64]) -> InputGrads {
        let node = &self.nodes[i];
        let inp = |k: usize| &self.nodes[node.inputs[k].0].value;
        let needs = |k: usize| self.nodes[node.inputs[k].0].requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![(0, gout.to_vec()), (1, gout.to_vec())],
            Op::Sub => vec![(0, gout.to_vec()), (1, gout.iter().map(|g| -g).collect())],
            Op::Mul => {
                let (a, b) = (inp(0).data(), inp(1).data());
                let mut r = Vec::new();
                if needs(0) {
                    r.push((0, gout.iter().zip(b).map(|(g, y)| g * y).collect()));
                }
                if needs(1) {
                    r.push((1, gout.iter().zip(a).map(|(g, x)| g * x).collect()));
                }
                r
            }
            Op::AddBias => {
                let e = inp(1).len();
                let mut gb = vec![0.0; e];
                for row in gout.chunks_exact(e) {
                    gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                vec![(0, gout.to_vec()), (1, gb)]
            }
            Op::Scale(c) => vec![(0, gout.iter().map(|g| g * c).collect())],
            Op::Relu => {
                let x = inp(0).data();
                vec![(0, gout.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Sigmoid => {
                let y = out.data();
                vec![(0, gout.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())]
            }
            Op::Tanh => {
                let y = out.data();
                vec![(0, gout.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect())]
            }
            Op::Sum => vec![(0, vec![gout[0]; inp(0).len()])],
            Op::ScaleRows => {
                let (x, s) = (inp(0), inp(1));
                let inner = *x.shape().last().unwrap();
                let mut gx = vec![0.0; x.len()];
                let mut gs = vec![0.0; s.len()];
                for (r, (&sv, gsv)) in s.data().iter().zip(gs.iter_mut()).enumerate() {
                    let span = r * inner..(r + 1) * inner;
                    for ((gxv, g), xv) in gx[span.clone()].iter_mut().zip(&gout[span.clone()]).zip(&x.data()[span]) {
                        *gxv = g * sv;
                        *gsv += g * xv;
                    }
                }
                vec![(0, gx), (1, gs)]
            }
            Op::MatMul => {
                let (a, b) = (inp(0), inp(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                matmul_backward(m, k, n, a.data(), b.data(), gout, needs(0), needs(1))
            }
            Op::Linear => {
                let (x, w) = (inp(0), inp(1));
                let (d, e) = (w.shape()[0], w.shape()[1]);
                let rows = x.len() / d;
                let mut r = matmul_backward(rows, d, e, x.data(), w.data(), gout, needs(0), needs(1));
                if needs(2) {
                    let mut gb = vec![0.0; e];
                    for row in gout.chunks_exact(e) {
                        gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    r.push((2, gb));
                }
                r
            }
            Op::Bmm { trans_b } => bmm_backward(inp(0), inp(1), *trans_b, gout, needs(0), needs(1)),
            Op::Softmax { axis } => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + j;
                        let dot: f64 = (0..n).map(|a| gout[idx(a)] * y[idx(a)]).sum();
                        for a in 0..n {
                            gx[idx(a)] = y[idx(a)] * (gout[idx(a)] - dot);
                        }
                    }
                }
                vec![(0, gx)]
            }
            Op::Shape(s) => s.backward(node.inputs.iter().map(|v| self.nodes[v.0].value.shape()).collect(), gout),
            Op::Conv1d(saved) => conv::backward(saved, inp(0), inp(1), gout, [needs(0), needs(1), needs(2)]),
            Op::BatchNorm(saved) => norm::backward(saved, inp(0), inp(1), gout),
            Op::Dropout { mask } => vec![(0, gout.iter().zip(mask).map(|(g, m)| g * m).collect())],
            Op::Lstm(saved) => recurrent::lstm_backward(saved, inp(0), inp(1), inp(2), out, gout),
            Op::Gru(saved) => recurrent::gru_backward(saved, inp(0), inp(1), inp(2), out, gout),
            Op::CrossEntropy(saved) => vec![(0, loss::backward(saved, gout[0]))],
        }
    }

    // ---- elementwise -------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, op, vec![a, b]))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(t, op, vec![a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub, |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul, |p, q| p * q)
    }

    /// Adds a bias of shape `[E]` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let e = *self.shape(x).last().unwrap();
        if self.shape(bias) != [e] {
            return Err(dim_err!("add_bias: bias {:?} vs last axis {e}", self.shape(bias)));
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(e) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddBias, vec![x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(c), |v| v * c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu, |v| if v < 0.0 { 0.0 } else { v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh, f64::tanh)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }

    /// `x[..., t] * s[...]`: scales every last-axis row of `x` by the matching
    /// entry of `s`, whose shape is `x`'s shape without the last axis.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.shape(s) != &xs[..xs.len() - 1] {
            return Err(dim_err!("scale_rows: {:?} cannot scale {:?}", self.shape(s), xs));
        }
        let inner = *xs.last().unwrap();
        let sv = self.value(s).data();
        let mut data = self.value(x).data().to_vec();
        for (row, &k) in data.chunks_exact_mut(inner).zip(sv) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        let t = Tensor::new(xs.to_vec(), data)?;
        Ok(self.push(t, Op::ScaleRows, vec![x, s]))
    }

    // ---- products ----------------------------------------------------

    /// Plain 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul: {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        super::linalg::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut c);
        let t = Tensor::new([m, n], c)?;
        Ok(self.push(t, Op::MatMul, vec![a, b]))
    }

    /// `x W + b` over the last axis of `x`; leading axes are batch axes.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() < 2 || sw.len() != 2 || *sx.last().unwrap() != sw[0] || sb != [sw[1]] {
            return Err(dim_err!("dense: x {sx:?}, W {sw:?}, b {sb:?}"));
        }
        let (d, e) = (sw[0], sw[1]);
        let rows = self.value(x).len() / d;
        let mut out_shape = sx.to_vec();
        *out_shape.last_mut().unwrap() = e;
        let bias = self.value(b).data();
        let mut c = Vec::with_capacity(rows * e);
        for _ in 0..rows {
            c.extend_from_slice(bias);
        }
        super::linalg::gemm(rows, d, e, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut c);
        let t = Tensor::new(out_shape, c)?;
        Ok(self.push(t, Op::Linear, vec![x, w, b]))
    }

    /// Batched product over a leading axis: `[N, M, K] x [N, K, P]`, or
    /// `[N, M, K] x [N, P, K]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err!("bmm: {sa:?} x {sb:?}"));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, p) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(dim_err!("bmm: inner dims {k} vs {kb} (trans_b = {trans_b})"));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut c = vec![0.0; batch * m * p];
        for n in 0..batch {
            super::linalg::gemm(
                m,
                k,
                p,
                &av[n * m * k..(n + 1) * m * k],
                false,
                &bv[n * k * p..(n + 1) * k * p],
                trans_b,
                0.0,
                &mut c[n * m * p..(n + 1) * m * p],
            );
        }
        let t = Tensor::new([batch, m, p], c)?;
        Ok(self.push(t, Op::Bmm { trans_b }, vec![a, b]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(dim_err!("softmax: axis {axis} out of range for {s:?}"));
        }
        let data = softmax_along(self.value(x).data(), &s, axis);
        let t = Tensor::new(s, data)?;
        Ok(self.push(t, Op::Softmax { axis }, vec![x]))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_along(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |a: usize| (o * n + a) * inner + j;
            let max = (0..n).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for a in 0..n {
                let e = (x[idx(a)] - max).exp();
                y[idx(a)] = e;
                total += e;
            }
            for a in 0..n {
                y[idx(a)] /= total;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn matmul_backward(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    g: &[f64],
    need_a: bool,
    need_b: bool,
) -> InputGrads {
    let mut r = Vec::new();
    if need_a {
        let mut ga = vec![0.0; m * k];
        super::linalg::gemm(m, n, k, g, false, b, true, 0.0, &mut ga);
        r.push((0, ga));
    }
    if need_b {
        let mut gb = vec![0.0; k * n];
        super::linalg::gemm(k, m, n, a, true, g, false, 0.0, &mut gb);
        r.push((1, gb));
    }
    r
}

fn bmm_backward(a: &Tensor, b: &Tensor, trans_b: bool, g: &[f64], need_a: bool, need_b: bool) -> InputGrads {
    let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let p = if trans_b { b.shape()[1] } else { b.shape()[2] };
    let mut ga = vec![0.0; if need_a { a.len() } else { 0 }];
    let mut gb = vec![0.0; if need_b { b.len() } else { 0 }];
    for n in 0..batch {
        let an = &a.data()[n * m * k..(n + 1) * m * k];
        let bn = &b.data()[n * k * p..(n + 1) * k * p];
        let gn = &g[n * m * p..(n + 1) * m * p];
        if need_a {
            // dA = G · op(B)^T
            let dst = &mut ga[n * m * k..(n + 1) * m * k];
            super::linalg::gemm(m, p, k, gn, false, bn, !trans_b, 0.0, dst);
        }
        if need_b {
            let dst = &mut gb[n * k * p..(n + 1) * k * p];
            if trans_b {
                // B is P×K: dB = G^T · A
                super::linalg::gemm(p, m, k, gn, true, an, false, 0.0, dst);
            } else {
                // B is K×P: dB = A^T · G
                super::linalg::gemm(k, m, p, an, true, gn, false, 0.0, dst);
            }
        }
    }
    let mut r = Vec::new();
    if need_a {
        r.push((0, ga));
    }
    if need_b {
        r.push((1, gb));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn relu_propagates_nan() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[f64::NAN, -1.0, 2.0]));
        let y = g.relu(x);
        let v = g.value(y).data();
        assert!(v[0].is_nan());
        assert_eq!(&v[1..], &[0.0, 2.0]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_x() {
        let mut g = Graph::new();
        let data = [1.0, -2.0, 3.5];
        let x = g.variable(t(&[3], &data));
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        let gx = g.grad(x).unwrap();
        for (gv, xv) in gx.data().iter().zip(data) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn fan_out_accumulates_branch_gradients() {
        // l = sum(3x) + sum(x*x): dl/dx = 3 + 2x
        let mut g = Graph::new();
        let data = [0.5, -1.5];
        let x = g.variable(t(&[2], &data));
        let a = g.scale(x, 3.0);
        let sa = g.sum(a);
        let b = g.mul(x, x).unwrap();
        let sb = g.sum(b);
        let l = g.add(sa, sb).unwrap();
        g.backward(l).unwrap();
        let gx = g.grad(x).unwrap();
        for (gv, xv) in gx.data().iter().zip(data) {
            assert!((gv - (3.0 + 2.0 * xv)).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let y = g.mul(x, c).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_affine_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 6.0]);

        let zero = g.constant(Tensor::zeros([2]));
        let id = g.linear(x, w, zero).unwrap();
        assert_eq!(g.value(id).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_dimension_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 3]));
        let w = g.constant(Tensor::zeros([2, 4]));
        let b = g.constant(Tensor::zeros([4]));
        assert!(matches!(g.linear(x, w, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.softmax(x, 0).unwrap();
        // exp(k) / (e + e^2 + e^3), evaluated independently
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        let expect: Vec<f64> = (1..=3).map(|k| (k as f64).exp() / z).collect();
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.value(y).data().iter().zip([0.09003057, 0.24472847, 0.66524096]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_middle_axis_sums_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 3, 4], |i| (i as f64 * 1.7).sin() * 5.0));
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y);
        for a in 0..2 {
            for c in 0..4 {
                let s: f64 = (0..3).map(|b| v.at(&[a, b, c])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
