//! Fused LSTM and GRU sequence operations with hand-written BPTT.
//!
//! Layouts: inputs `B×T×D`, outputs `B×T×H`. LSTM gate blocks are ordered
//! (input, forget, candidate, output); GRU blocks are (reset, update, new).

use crate::error::{dim_err, Result};
use crate::nn::graph::{sigmoid, Graph, InputGrads, Op, Var};
use crate::nn::linalg::gemm;
use crate::nn::tensor::Tensor;

pub(crate) struct LstmSaved {
    hidden: usize,
    reverse: bool,
    /// Post-activation gates, `B×T×4H`.
    acts: Vec<f64>,
    /// Cell states, `B×T×H`.
    cells: Vec<f64>,
}

pub(crate) struct GruSaved {
    hidden: usize,
    /// Post-activation reset/update/new gates, `B×T×3H`.
    acts: Vec<f64>,
    /// Recurrent contribution to the new gate, `h W_hn + b_hn`, `B×T×H`.
    hn: Vec<f64>,
}

fn step_order(t: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    }
}

/// Copies the `B×width` slab at time `t` out of a `B×T×width` buffer.
fn gather_step(src: &[f64], b: usize, t_len: usize, width: usize, t: usize, dst: &mut [f64]) {
    for n in 0..b {
        let s = (n * t_len + t) * width;
        dst[n * width..(n + 1) * width].copy_from_slice(&src[s..s + width]);
    }
}

fn scatter_step(src: &[f64], b: usize, t_len: usize, width: usize, t: usize, dst: &mut [f64]) {
    for n in 0..b {
        let d = (n * t_len + t) * width;
        dst[d..d + width].copy_from_slice(&src[n * width..(n + 1) * width]);
    }
}

/// `x W + bias` over a `B×T×D` input, returned as a flat `(B*T)×G` buffer.
fn input_projection(x: &[f64], rows: usize, d: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let g = bias.len();
    let mut out = Vec::with_capacity(rows * g);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(rows, d, g, x, false, w, false, 1.0, &mut out);
    out
}

fn check_seq(g: &Graph, x: Var, w_ih: Var, w_hh: Var, gates: usize, what: &str) -> Result<(usize, usize, usize, usize)> {
    let (sx, si, sh) = (g.shape(x), g.shape(w_ih), g.shape(w_hh));
    if sx.len() != 3 || si.len() != 2 || sh.len() != 2 {
        return Err(dim_err!("{what}: x {sx:?}, w_ih {si:?}, w_hh {sh:?}"));
    }
    let (b, t, d) = (sx[0], sx[1], sx[2]);
    let h = sh[0];
    if si[0] != d || si[1] != gates * h || sh[1] != gates * h {
        return Err(dim_err!("{what}: x {sx:?}, w_ih {si:?}, w_hh {sh:?} inconsistent"));
    }
    Ok((b, t, d, h))
}

impl Graph {
    /// Unidirectional LSTM over `x: B×T×D` with `w_ih: D×4H`, `w_hh: H×4H`,
    /// `bias: 4H`; zero initial state. With `reverse`, the sequence is read
    /// from the last step and the output at `t` is the state after reading
    /// `t..T`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let (b, t_len, d, h) = check_seq(self, x, w_ih, w_hh, 4, "lstm")?;
        if self.shape(bias) != [4 * h] {
            return Err(dim_err!("lstm: bias {:?} for hidden {h}", self.shape(bias)));
        }
        let g4 = 4 * h;
        let mut xw = input_projection(self.value(x).data(), b * t_len, d, self.value(w_ih).data(), self.value(bias).data());
        let whh = self.value(w_hh).data();
        let mut out = vec![0.0; b * t_len * h];
        let mut cells = vec![0.0; b * t_len * h];
        let mut hprev = vec![0.0; b * h];
        let mut cprev = vec![0.0; b * h];
        let mut gates = vec![0.0; b * g4];
        for t in step_order(t_len, reverse) {
            gather_step(&xw, b, t_len, g4, t, &mut gates);
            gemm(b, h, g4, &hprev, false, whh, false, 1.0, &mut gates);
            for n in 0..b {
                let gr = &mut gates[n * g4..(n + 1) * g4];
                for j in 0..h {
                    let i = sigmoid(gr[j]);
                    let f = sigmoid(gr[h + j]);
                    let c_hat = gr[2 * h + j].tanh();
                    let o = sigmoid(gr[3 * h + j]);
                    gr[j] = i;
                    gr[h + j] = f;
                    gr[2 * h + j] = c_hat;
                    gr[3 * h + j] = o;
                    let c = f * cprev[n * h + j] + i * c_hat;
                    cprev[n * h + j] = c;
                    hprev[n * h + j] = o * c.tanh();
                }
            }
            // xw is dead at step t after the gather; reuse it for the activations.
            scatter_step(&gates, b, t_len, g4, t, &mut xw);
            scatter_step(&cprev, b, t_len, h, t, &mut cells);
            scatter_step(&hprev, b, t_len, h, t, &mut out);
        }
        let value = Tensor::new([b, t_len, h], out)?;
        let saved = LstmSaved { hidden: h, reverse, acts: xw, cells };
        Ok(self.push(value, Op::Lstm(saved), vec![x, w_ih, w_hh, bias]))
    }

    /// Unidirectional GRU over `x: B×T×D` with `w_ih: D×3H`, `w_hh: H×3H`,
    /// separate input and recurrent biases (`3H` each); zero initial state.
    /// `n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
    pub fn gru(&mut self, x: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let (b, t_len, d, h) = check_seq(self, x, w_ih, w_hh, 3, "gru")?;
        for bias in [b_ih, b_hh] {
            if self.shape(bias) != [3 * h] {
                return Err(dim_err!("gru: bias {:?} for hidden {h}", self.shape(bias)));
            }
        }
        let g3 = 3 * h;
        let mut xw = input_projection(self.value(x).data(), b * t_len, d, self.value(w_ih).data(), self.value(b_ih).data());
        let whh = self.value(w_hh).data();
        let bhh = self.value(b_hh).data();
        let mut out = vec![0.0; b * t_len * h];
        let mut hn_all = vec![0.0; b * t_len * h];
        let mut hprev = vec![0.0; b * h];
        let mut xg = vec![0.0; b * g3];
        let mut hg = vec![0.0; b * g3];
        let mut hn = vec![0.0; b * h];
        for t in 0..t_len {
            gather_step(&xw, b, t_len, g3, t, &mut xg);
            for row in hg.chunks_exact_mut(g3) {
                row.copy_from_slice(bhh);
            }
            gemm(b, h, g3, &hprev, false, whh, false, 1.0, &mut hg);
            for n in 0..b {
                let (xr, hr) = (&mut xg[n * g3..(n + 1) * g3], &hg[n * g3..(n + 1) * g3]);
                for j in 0..h {
                    let r = sigmoid(xr[j] + hr[j]);
                    let z = sigmoid(xr[h + j] + hr[h + j]);
                    let hnv = hr[2 * h + j];
                    let nn = (xr[2 * h + j] + r * hnv).tanh();
                    xr[j] = r;
                    xr[h + j] = z;
                    xr[2 * h + j] = nn;
                    hn[n * h + j] = hnv;
                    let hp = hprev[n * h + j];
                    hprev[n * h + j] = (1.0 - z) * nn + z * hp;
                }
            }
            scatter_step(&xg, b, t_len, g3, t, &mut xw);
            scatter_step(&hn, b, t_len, h, t, &mut hn_all);
            scatter_step(&hprev, b, t_len, h, t, &mut out);
        }
        let value = Tensor::new([b, t_len, h], out)?;
        let saved = GruSaved { hidden: h, acts: xw, hn: hn_all };
        Ok(self.push(value, Op::Gru(saved), vec![x, w_ih, w_hh, b_ih, b_hh]))
    }
}

/// Gradients for `x`, `w_ih` and the summed gate-bias from per-step gate
/// gradients `dg` (`(B*T)×G`).
fn input_side_grads(x: &Tensor, w_ih: &Tensor, dg: &[f64], gates: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = w_ih.shape()[0];
    let rows = x.len() / d;
    let mut dx = vec![0.0; x.len()];
    gemm(rows, gates, d, dg, false, w_ih.data(), true, 0.0, &mut dx);
    let mut dw = vec![0.0; w_ih.len()];
    gemm(d, rows, gates, x.data(), true, dg, false, 0.0, &mut dw);
    let mut db = vec![0.0; gates];
    for row in dg.chunks_exact(gates) {
        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    (dx, dw, db)
}

pub(crate) fn lstm_backward(saved: &LstmSaved, x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, out: &Tensor, g: &[f64]) -> InputGrads {
    let (b, t_len) = (x.shape()[0], x.shape()[1]);
    let h = saved.hidden;
    let g4 = 4 * h;
    let order = step_order(t_len, saved.reverse);
    let mut dgates = vec![0.0; b * t_len * g4];
    let mut dw_hh = vec![0.0; w_hh.len()];
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    let mut acts = vec![0.0; b * g4];
    let mut cell = vec![0.0; b * h];
    let mut c_prev = vec![0.0; b * h];
    let mut h_prev = vec![0.0; b * h];
    let mut gout = vec![0.0; b * h];
    let mut dg_step = vec![0.0; b * g4];
    for (k, &t) in order.iter().enumerate().rev() {
        gather_step(&saved.acts, b, t_len, g4, t, &mut acts);
        gather_step(&saved.cells, b, t_len, h, t, &mut cell);
        gather_step(g, b, t_len, h, t, &mut gout);
        if k > 0 {
            let tp = order[k - 1];
            gather_step(&saved.cells, b, t_len, h, tp, &mut c_prev);
            gather_step(out.data(), b, t_len, h, tp, &mut h_prev);
        } else {
            c_prev.fill(0.0);
            h_prev.fill(0.0);
        }
        for n in 0..b {
            let a = &acts[n * g4..(n + 1) * g4];
            let dg = &mut dg_step[n * g4..(n + 1) * g4];
            for j in 0..h {
                let idx = n * h + j;
                let (i, f, c_hat, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                let tc = cell[idx].tanh();
                let dh = gout[idx] + dh_next[idx];
                let dc = dc_next[idx] + dh * o * (1.0 - tc * tc);
                dg[j] = dc * c_hat * i * (1.0 - i);
                dg[h + j] = dc * c_prev[idx] * f * (1.0 - f);
                dg[2 * h + j] = dc * i * (1.0 - c_hat * c_hat);
                dg[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[idx] = dc * f;
            }
        }
        gemm(b, g4, h, &dg_step, false, w_hh.data(), true, 0.0, &mut dh_next);
        gemm(h, b, g4, &h_prev, true, &dg_step, false, 1.0, &mut dw_hh);
        scatter_step(&dg_step, b, t_len, g4, t, &mut dgates);
    }
    let (dx, dw_ih, db) = input_side_grads(x, w_ih, &dgates, g4);
    vec![(0, dx), (1, dw_ih), (2, dw_hh), (3, db)]
}

pub(crate) fn gru_backward(saved: &GruSaved, x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, out: &Tensor, g: &[f64]) -> InputGrads {
    let (b, t_len) = (x.shape()[0], x.shape()[1]);
    let h = saved.hidden;
    let g3 = 3 * h;
    let mut dx_gates = vec![0.0; b * t_len * g3];
    let mut dw_hh = vec![0.0; w_hh.len()];
    let mut db_hh = vec![0.0; g3];
    let mut dh_next = vec![0.0; b * h];
    let mut acts = vec![0.0; b * g3];
    let mut hn = vec![0.0; b * h];
    let mut h_prev = vec![0.0; b * h];
    let mut gout = vec![0.0; b * h];
    let mut dxg = vec![0.0; b * g3];
    let mut dhg = vec![0.0; b * g3];
    let mut dh_direct = vec![0.0; b * h];
    for t in (0..t_len).rev() {
        gather_step(&saved.acts, b, t_len, g3, t, &mut acts);
        gather_step(&saved.hn, b, t_len, h, t, &mut hn);
        gather_step(g, b, t_len, h, t, &mut gout);
        if t > 0 {
            gather_step(out.data(), b, t_len, h, t - 1, &mut h_prev);
        } else {
            h_prev.fill(0.0);
        }
        for n in 0..b {
            let a = &acts[n * g3..(n + 1) * g3];
            for j in 0..h {
                let idx = n * h + j;
                let (r, z, nn) = (a[j], a[h + j], a[2 * h + j]);
                let dh = gout[idx] + dh_next[idx];
                let dn = dh * (1.0 - z);
                let dz = dh * (h_prev[idx] - nn);
                dh_direct[idx] = dh * z;
                let dan = dn * (1.0 - nn * nn);
                let dr = dan * hn[idx];
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                let (xo, ho) = (n * g3, n * g3);
                dxg[xo + j] = dar;
                dxg[xo + h + j] = daz;
                dxg[xo + 2 * h + j] = dan;
                dhg[ho + j] = dar;
                dhg[ho + h + j] = daz;
                dhg[ho + 2 * h + j] = dan * r;
            }
        }
        dh_next.copy_from_slice(&dh_direct);
        gemm(b, g3, h, &dhg, false, w_hh.data(), true, 1.0, &mut dh_next);
        gemm(h, b, g3, &h_prev, true, &dhg, false, 1.0, &mut dw_hh);
        for row in dhg.chunks_exact(g3) {
            db_hh.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        scatter_step(&dxg, b, t_len, g3, t, &mut dx_gates);
    }
    let (dx, dw_ih, db_ih) = input_side_grads(x, w_ih, &dx_gates, g3);
    vec![(0, dx), (1, dw_ih), (2, dw_hh), (3, db_ih), (4, db_hh)]
}
