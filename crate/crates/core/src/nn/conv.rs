//! Stride-1, same-padded 1-D convolution via im2col + GEMM.

use crate::error::{dim_err, Result};
use crate::nn::graph::{Graph, InputGrads, Op, Var};
use crate::nn::linalg::gemm;
use crate::nn::tensor::Tensor;

pub(crate) struct Conv1dSaved {
    pad: usize,
}

/// Fills `cols` (`(cin*k) × t`) with zero-padded shifted copies of one
/// `cin × t` sample.
fn im2col(x: &[f64], cin: usize, t: usize, k: usize, pad: usize, cols: &mut [f64]) {
    for ci in 0..cin {
        let row_in = &x[ci * t..(ci + 1) * t];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * t..(ci * k + kk + 1) * t];
            for (tt, slot) in row.iter_mut().enumerate() {
                let src = tt + kk;
                *slot = if src >= pad && src - pad < t { row_in[src - pad] } else { 0.0 };
            }
        }
    }
}

fn col2im_add(cols: &[f64], cin: usize, t: usize, k: usize, pad: usize, dx: &mut [f64]) {
    for ci in 0..cin {
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * t..(ci * k + kk + 1) * t];
            for (tt, v) in row.iter().enumerate() {
                let src = tt + kk;
                if src >= pad && src - pad < t {
                    dx[ci * t + src - pad] += v;
                }
            }
        }
    }
}

impl Graph {
    /// `x: B×Cin×T`, `weight: Cout×Cin×K` (K odd), `bias: Cout` -> `B×Cout×T`.
    pub fn conv1d_same(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(weight), self.shape(bias));
        if sx.len() != 3 || sw.len() != 3 || sb.len() != 1 {
            return Err(dim_err!("conv1d: x {sx:?}, weight {sw:?}, bias {sb:?}"));
        }
        let (b, cin, t) = (sx[0], sx[1], sx[2]);
        let (cout, wcin, k) = (sw[0], sw[1], sw[2]);
        if wcin != cin {
            return Err(dim_err!("conv1d: input has {cin} channels, weights expect {wcin}"));
        }
        if sb[0] != cout {
            return Err(dim_err!("conv1d: bias length {} for {cout} filters", sb[0]));
        }
        if k % 2 == 0 {
            return Err(dim_err!("conv1d: kernel size {k} must be odd"));
        }
        if t < k {
            return Err(dim_err!("conv1d: sequence length {t} shorter than kernel {k}"));
        }
        let pad = (k - 1) / 2;
        let (xv, wv, bv) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let mut out = vec![0.0; b * cout * t];
        let mut cols = vec![0.0; cin * k * t];
        for n in 0..b {
            im2col(&xv[n * cin * t..(n + 1) * cin * t], cin, t, k, pad, &mut cols);
            let dst = &mut out[n * cout * t..(n + 1) * cout * t];
            for (row, &bb) in dst.chunks_exact_mut(t).zip(bv) {
                row.fill(bb);
            }
            gemm(cout, cin * k, t, wv, false, &cols, false, 1.0, dst);
        }
        let value = Tensor::new([b, cout, t], out)?;
        Ok(self.push(value, Op::Conv1d(Conv1dSaved { pad }), vec![x, weight, bias]))
    }
}

pub(crate) fn backward(saved: &Conv1dSaved, x: &Tensor, w: &Tensor, g: &[f64], needs: [bool; 3]) -> InputGrads {
    let (b, cin, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let ck = cin * k;
    let mut dx = vec![0.0; if needs[0] { x.len() } else { 0 }];
    let mut dw = vec![0.0; if needs[1] { w.len() } else { 0 }];
    let mut db = vec![0.0; if needs[2] { cout } else { 0 }];
    let mut cols = vec![0.0; ck * t];
    let mut dcols = vec![0.0; ck * t];
    for n in 0..b {
        let gn = &g[n * cout * t..(n + 1) * cout * t];
        if needs[1] {
            im2col(&x.data()[n * cin * t..(n + 1) * cin * t], cin, t, k, saved.pad, &mut cols);
            gemm(cout, t, ck, gn, false, &cols, true, 1.0, &mut dw);
        }
        if needs[0] {
            gemm(ck, cout, t, w.data(), true, gn, false, 0.0, &mut dcols);
            col2im_add(&dcols, cin, t, k, saved.pad, &mut dx[n * cin * t..(n + 1) * cin * t]);
        }
        if needs[2] {
            for (acc, row) in db.iter_mut().zip(gn.chunks_exact(t)) {
                *acc += row.iter().sum::<f64>();
            }
        }
    }
    let mut r = Vec::new();
    if needs[0] {
        r.push((0, dx));
    }
    if needs[1] {
        r.push((1, dw));
    }
    if needs[2] {
        r.push((2, db));
    }
    r
}
