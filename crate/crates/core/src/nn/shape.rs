//! Data-movement operations: reshape, permute, slicing, joining, and
//! mean reduction over one axis.

use crate::error::{dim_err, Result};
use crate::nn::graph::{Graph, InputGrads, Op, Var};
use crate::nn::tensor::{split_axis, Tensor};

pub(crate) enum ShapeOp {
    Reshape,
    Permute(Vec<usize>),
    Narrow { axis: usize, start: usize },
    Select { axis: usize, index: usize },
    Concat { axis: usize },
    Stack { axis: usize },
    MeanAxis { axis: usize },
}

impl ShapeOp {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            ShapeOp::Reshape => "reshape",
            ShapeOp::Permute(_) => "permute",
            ShapeOp::Narrow { .. } => "narrow",
            ShapeOp::Select { .. } => "select",
            ShapeOp::Concat { .. } => "concat",
            ShapeOp::Stack { .. } => "stack",
            ShapeOp::MeanAxis { .. } => "mean_axis",
        }
    }

    pub(crate) fn backward(&self, in_shapes: Vec<&[usize]>, g: &[f64]) -> InputGrads {
        match self {
            ShapeOp::Reshape => vec![(0, g.to_vec())],
            ShapeOp::Permute(perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let out_shape: Vec<usize> = perm.iter().map(|&p| in_shapes[0][p]).collect();
                vec![(0, permute_data(g, &out_shape, &inverse))]
            }
            ShapeOp::Narrow { axis, start } => {
                let (outer, n, inner) = split_axis(in_shapes[0], *axis);
                let len = g.len() / (outer * inner);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let dst = (o * n + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(src);
                }
                vec![(0, gx)]
            }
            ShapeOp::Select { axis, index } => {
                let (outer, n, inner) = split_axis(in_shapes[0], *axis);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + index) * inner;
                    gx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
                vec![(0, gx)]
            }
            ShapeOp::Concat { axis } => {
                let (outer, _, inner) = split_axis(in_shapes[0], *axis);
                let total: usize = in_shapes.iter().map(|s| s[*axis]).sum();
                let mut offset = 0;
                let mut r = Vec::with_capacity(in_shapes.len());
                for (k, s) in in_shapes.iter().enumerate() {
                    let n = s[*axis];
                    let mut gk = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        gk.extend_from_slice(&g[src..src + n * inner]);
                    }
                    offset += n;
                    r.push((k, gk));
                }
                r
            }
            ShapeOp::Stack { axis } => {
                let count = in_shapes.len();
                let (outer, inner) = {
                    let s = in_shapes[0];
                    (s[..*axis].iter().product::<usize>(), s[*axis..].iter().product::<usize>())
                };
                (0..count)
                    .map(|k| {
                        let mut gk = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            let src = (o * count + k) * inner;
                            gk.extend_from_slice(&g[src..src + inner]);
                        }
                        (k, gk)
                    })
                    .collect()
            }
            ShapeOp::MeanAxis { axis } => {
                let (outer, n, inner) = split_axis(in_shapes[0], *axis);
                let scale = 1.0 / n as f64;
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for a in 0..n {
                        let dst = (o * n + a) * inner;
                        for j in 0..inner {
                            gx[dst + j] = g[o * inner + j] * scale;
                        }
                    }
                }
                vec![(0, gx)]
            }
        }
    }
}

/// Returns `x` (of shape `shape`) with axes reordered so that output axis
/// `i` is input axis `perm[i]`.
pub(crate) fn permute_data(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..x.len() {
        out.push(x[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

impl Graph {
    fn push_shape(&mut self, data: Vec<f64>, shape: Vec<usize>, op: ShapeOp, inputs: Vec<Var>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Shape(op), inputs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(dim_err!("reshape: {:?} into {shape:?}", self.shape(x)));
        }
        let data = self.value(x).data().to_vec();
        self.push_shape(data, shape.to_vec(), ShapeOp::Reshape, vec![x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("permute: {perm:?} is not a permutation of rank {}", s.len()));
        }
        let data = permute_data(self.value(x).data(), &s, perm);
        let out_shape = perm.iter().map(|&p| s[p]).collect();
        self.push_shape(data, out_shape, ShapeOp::Permute(perm.to_vec()), vec![x])
    }

    /// Swaps axes 1 and 2 of a rank-3 tensor (`B×C×T` <-> `B×T×C`).
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[0, 2, 1])
    }

    /// Contiguous slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(dim_err!("narrow: axis {axis} range {start}+{len} in {s:?}"));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * n + start) * inner;
            data.extend_from_slice(&xv[src..src + len * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = len;
        self.push_shape(data, out_shape, ShapeOp::Narrow { axis, start }, vec![x])
    }

    /// Picks one index along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || index >= s[axis] || s.len() < 2 {
            return Err(dim_err!("select: axis {axis} index {index} in {s:?}"));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let src = (o * n + index) * inner;
            data.extend_from_slice(&xv[src..src + inner]);
        }
        let mut out_shape = s;
        out_shape.remove(axis);
        self.push_shape(data, out_shape, ShapeOp::Select { axis, index }, vec![x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| dim_err!("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat: axis {axis} for rank {}", first.len()));
        }
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat: {s:?} vs {first:?} along axis {axis}"));
            }
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let total: usize = xs.iter().map(|&v| self.shape(v)[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let src = o * n * inner;
                data.extend_from_slice(&self.value(v).data()[src..src + n * inner]);
            }
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        self.push_shape(data, out_shape, ShapeOp::Concat { axis }, xs.to_vec())
    }

    /// Stacks equally shaped tensors along a new axis at position `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| dim_err!("stack of nothing"))?).to_vec();
        if axis > first.len() || xs.iter().any(|&v| self.shape(v) != first.as_slice()) {
            return Err(dim_err!("stack: incompatible shapes or axis {axis}"));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * inner * xs.len());
        for o in 0..outer {
            for &v in xs {
                data.extend_from_slice(&self.value(v).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = first;
        out_shape.insert(axis, xs.len());
        self.push_shape(data, out_shape, ShapeOp::Stack { axis }, xs.to_vec())
    }

    /// Mean over `axis`, dropping that axis.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s.len() < 2 {
            return Err(dim_err!("mean_axis: axis {axis} for {s:?}"));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = (o * n + a) * inner;
                for j in 0..inner {
                    data[o * inner + j] += xv[src + j];
                }
            }
        }
        let scale = 1.0 / n as f64;
        data.iter_mut().for_each(|v| *v *= scale);
        let mut out_shape = s;
        out_shape.remove(axis);
        self.push_shape(data, out_shape, ShapeOp::MeanAxis { axis }, vec![x])
    }
}
