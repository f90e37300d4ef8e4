//! Parameterized layers built on [`Graph`] operations.
//!
//! Each layer registers its weights in a [`ParamStore`] under a dotted name
//! prefix at construction and reads them back through a [`Ctx`] during the
//! forward pass.

use rand::{Rng, RngCore};

use crate::error::{config_err, dim_err, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::norm::RunningStats;
use crate::nn::param::{BufferId, ParamId, ParamStore};
use crate::nn::tensor::Tensor;
use crate::nn::Mode;

/// Everything a forward pass needs: the graph being recorded, the store
/// (for batch-norm statistics), the mode and a random source for dropout.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    pub store: &'a mut ParamStore,
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
    vars: Vec<Var>,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, store: &'a mut ParamStore, mode: Mode, rng: &'a mut dyn RngCore) -> Self {
        let vars = store.bind_all(graph);
        Self { graph, store, mode, rng, vars }
    }

    /// The graph node bound to parameter `id`.
    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut dyn RngCore) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights and bias uniform in `±1/sqrt(in_dim)`.
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add_param(format!("{prefix}.weight"), uniform(&[in_dim, out_dim], bound, rng))?;
        let bias = store.add_param(format!("{prefix}.bias"), uniform(&[out_dim], bound, rng))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        ctx.graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(config_err!("{prefix}: kernel size {kernel} must be odd"));
        }
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let weight = store.add_param(format!("{prefix}.weight"), uniform(&[out_ch, in_ch, kernel], bound, rng))?;
        let bias = store.add_param(format!("{prefix}.bias"), uniform(&[out_ch], bound, rng))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        ctx.graph.conv1d_same(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if eps <= 0.0 {
            return Err(config_err!("{prefix}: eps must be positive, got {eps}"));
        }
        Ok(Self {
            gamma: store.add_param(format!("{prefix}.gamma"), Tensor::full([channels], 1.0))?,
            beta: store.add_param(format!("{prefix}.beta"), Tensor::zeros([channels]))?,
            running_mean: store.add_buffer(format!("{prefix}.running_mean"), Tensor::zeros([channels]))?,
            running_var: store.add_buffer(format!("{prefix}.running_var"), Tensor::full([channels], 1.0))?,
            eps,
            momentum,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.p(self.gamma), ctx.p(self.beta));
        let (y, update) = {
            let running = RunningStats {
                mean: ctx.store.buffer(self.running_mean).value.data(),
                var: ctx.store.buffer(self.running_var).value.data(),
            };
            ctx.graph.batchnorm1d(x, gamma, beta, self.eps, self.momentum, ctx.mode, running)?
        };
        if let Some((mean, var)) = update {
            ctx.store.buffer_mut(self.running_mean).value.data_mut().copy_from_slice(&mean);
            ctx.store.buffer_mut(self.running_var).value.data_mut().copy_from_slice(&var);
        }
        Ok(y)
    }
}

/// Convolution followed by batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        eps: f64,
        momentum: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(store, &format!("{prefix}.conv"), in_ch, out_ch, kernel, rng)?,
            bn: BatchNorm1d::new(store, &format!("{prefix}.bn"), out_ch, eps, momentum)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = self.conv.forward(ctx, x)?;
        let n = self.bn.forward(ctx, c)?;
        Ok(ctx.graph.relu(n))
    }
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    /// Weights uniform in `±1/sqrt(H)`, gate biases zero except the forget
    /// gate at 1.
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_param(format!("{prefix}.w_ih"), uniform(&[input, 4 * hidden], bound, rng))?;
        let w_hh = store.add_param(format!("{prefix}.w_hh"), uniform(&[hidden, 4 * hidden], bound, rng))?;
        let bias = Tensor::from_fn([4 * hidden], |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 });
        let bias = store.add_param(format!("{prefix}.bias"), bias)?;
        Ok(Self { w_ih, w_hh, bias, hidden })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, reverse: bool) -> Result<Var> {
        let (wi, wh, b) = (ctx.p(self.w_ih), ctx.p(self.w_hh), ctx.p(self.bias));
        ctx.graph.lstm(x, wi, wh, b, reverse)
    }
}

/// Forward and backward LSTMs over `B×T×D`, concatenated to `B×T×2H`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward_cell: Lstm,
    pub backward_cell: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(Self {
            forward_cell: Lstm::new(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
            backward_cell: Lstm::new(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let f = self.forward_cell.forward(ctx, x, false)?;
        let b = self.backward_cell.forward(ctx, x, true)?;
        ctx.graph.concat(&[f, b], 2)
    }
}

#[derive(Debug, Clone)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl Gru {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: store.add_param(format!("{prefix}.w_ih"), uniform(&[input, 3 * hidden], bound, rng))?,
            w_hh: store.add_param(format!("{prefix}.w_hh"), uniform(&[hidden, 3 * hidden], bound, rng))?,
            b_ih: store.add_param(format!("{prefix}.b_ih"), uniform(&[3 * hidden], bound, rng))?,
            b_hh: store.add_param(format!("{prefix}.b_hh"), uniform(&[3 * hidden], bound, rng))?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (wi, wh, bi, bh) = (ctx.p(self.w_ih), ctx.p(self.w_hh), ctx.p(self.b_ih), ctx.p(self.b_hh));
        ctx.graph.gru(x, wi, wh, bi, bh)
    }
}

/// Multi-head scaled dot-product attention with learned query, key, value
/// and output projections. Inputs are channel-last `B×T×D`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(config_err!("{prefix}: model width {dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{prefix}.q"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{prefix}.k"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{prefix}.v"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{prefix}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// Splits `B×T×D` into `(B*heads)×T×(D/heads)`.
    fn split_heads(&self, g: &mut Graph, x: Var, b: usize, t: usize) -> Result<Var> {
        let dk = self.dim / self.heads;
        let r = g.reshape(x, &[b, t, self.heads, dk])?;
        let p = g.permute(r, &[0, 2, 1, 3])?;
        g.reshape(p, &[b * self.heads, t, dk])
    }

    /// Returns the attended output `B×Tq×D` and the attention weights
    /// `(B*heads)×Tq×Tkv` (softmax over the key/value time axis).
    pub fn forward_with_weights(&self, ctx: &mut Ctx, query_in: Var, kv_in: Var) -> Result<(Var, Var)> {
        let (sq, skv) = (ctx.graph.shape(query_in).to_vec(), ctx.graph.shape(kv_in).to_vec());
        if sq.len() != 3 || skv.len() != 3 || sq[0] != skv[0] || sq[2] != self.dim || skv[2] != self.dim {
            return Err(dim_err!("attention: query {sq:?}, key/value {skv:?}, width {}", self.dim));
        }
        let (b, tq, tkv) = (sq[0], sq[1], skv[1]);
        let q = self.query.forward(ctx, query_in)?;
        let k = self.key.forward(ctx, kv_in)?;
        let v = self.value.forward(ctx, kv_in)?;
        let g = &mut *ctx.graph;
        let q = self.split_heads(g, q, b, tq)?;
        let k = self.split_heads(g, k, b, tkv)?;
        let v = self.split_heads(g, v, b, tkv)?;
        let scores = g.bmm(q, k, true)?;
        let scaled = g.scale(scores, 1.0 / ((self.dim / self.heads) as f64).sqrt());
        let weights = g.softmax(scaled, 2)?;
        let mixed = g.bmm(weights, v, false)?;
        let r = g.reshape(mixed, &[b, self.heads, tq, self.dim / self.heads])?;
        let p = g.permute(r, &[0, 2, 1, 3])?;
        let merged = g.reshape(p, &[b, tq, self.dim])?;
        let out = self.output.forward(ctx, merged)?;
        Ok((out, weights))
    }

    pub fn forward(&self, ctx: &mut Ctx, query_in: Var, kv_in: Var) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, query_in, kv_in)?.0)
    }
}
