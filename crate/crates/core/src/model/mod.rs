//! The multi-task network, its ablations and the single-task baseline.
//!
//! Convolutional stages use the `B×C×T` layout; attention and the
//! recurrent stages run channel-last (`B×T×C`).

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ConvSpec, DystanConfig, Variant, ALL_VARIANTS};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::nn::layers::{BiLstm, ConvBlock, Gru, Linear, MultiHeadAttention};
use crate::nn::{Ctx, Graph, Mode, ParamId, ParamStore, Tensor, Var};

/// Name prefixes of the two task streams.
pub const TASKS: [&str; 2] = ["sed", "soc"];

/// Initial diagonal logit of the static cross-stitch, `ln 9`, so each row
/// starts at `[0.9, 0.1]`.
pub const STATIC_STITCH_DIAGONAL: f64 = 2.197_224_577_336_219_6;

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct TaskOutputs {
    pub sed_logits: Var,
    pub soc_logits: Var,
    pub sed_embedding: Var,
    pub soc_embedding: Var,
    /// `B×C×2×2` row-stochastic mixing matrices; `None` for the baseline.
    pub mixing: Option<Var>,
    /// Intermediate stage outputs in execution order, e.g. `sed.branch`.
    pub stages: Vec<(String, Var)>,
}

impl TaskOutputs {
    pub fn stage(&self, name: &str) -> Option<Var> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Plain values of a batched evaluation pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inference {
    pub sed_logits: Vec<Vec<f64>>,
    pub soc_logits: Vec<Vec<f64>>,
    pub sed_embedding: Vec<Vec<f64>>,
    pub soc_embedding: Vec<Vec<f64>>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let width = t.shape().last().copied().unwrap_or(1).max(1);
    t.data().chunks(width).map(<[f64]>::to_vec).collect()
}

/// `out_a = M00·a + M01·b`, `out_b = M10·a + M11·b` per instance and channel.
pub fn cross_stitch(g: &mut Graph, a: Var, b: Var, m: Var) -> Result<(Var, Var)> {
    let (sa, sm) = (g.shape(a).to_vec(), g.shape(m).to_vec());
    if sa.len() != 3 || g.shape(b) != sa.as_slice() || sm != [sa[0], sa[1], 2, 2] {
        return Err(dim_err!("cross-stitch: streams {sa:?} / {:?}, mixing {sm:?}", g.shape(b)));
    }
    let mut outs = [a, a];
    for (r, out) in outs.iter_mut().enumerate() {
        let row = g.select(m, 2, r)?;
        let wa = g.select(row, 2, 0)?;
        let wb = g.select(row, 2, 1)?;
        let pa = g.scale_rows(a, wa)?;
        let pb = g.scale_rows(b, wb)?;
        *out = g.add(pa, pb)?;
    }
    Ok((outs[0], outs[1]))
}

/// Dynamic cross-stitch unit: a two-layer controller maps the time-pooled
/// streams to per-instance, per-channel mixing matrices.
#[derive(Debug, Clone)]
pub struct Dcsu {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl Dcsu {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, hidden: usize, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), 2 * channels, hidden, rng)?,
            fc2: Linear::new(store, &format!("{prefix}.fc2"), hidden, 4 * channels, rng)?,
            channels,
        })
    }

    /// Returns `(out_sed, out_soc, M)`.
    pub fn forward(&self, ctx: &mut Ctx, f_sed: Var, f_soc: Var) -> Result<(Var, Var, Var)> {
        let s = ctx.graph.shape(f_sed).to_vec();
        if s.len() != 3 || s[1] != self.channels || ctx.graph.shape(f_soc) != s.as_slice() {
            return Err(dim_err!("dcsu: inputs {s:?} and {:?}, expected B×{}×T", ctx.graph.shape(f_soc), self.channels));
        }
        let g = &mut *ctx.graph;
        let pa = g.mean_axis(f_sed, 2)?;
        let pb = g.mean_axis(f_soc, 2)?;
        let pooled = g.concat(&[pa, pb], 1)?;
        let h = self.fc1.forward(ctx, pooled)?;
        let h = ctx.graph.relu(h);
        let logits = self.fc2.forward(ctx, h)?;
        let g = &mut *ctx.graph;
        let logits = g.reshape(logits, &[s[0], self.channels, 2, 2])?;
        let m = g.softmax(logits, 3)?;
        let (a, b) = cross_stitch(g, f_sed, f_soc, m)?;
        Ok((a, b, m))
    }
}

/// Input-independent cross-stitch with learned per-channel logits.
#[derive(Debug, Clone)]
pub struct StaticStitch {
    pub logits: ParamId,
    pub channels: usize,
}

impl StaticStitch {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        let init = Tensor::from_fn([channels, 2, 2], |i| if i % 4 == 0 || i % 4 == 3 { STATIC_STITCH_DIAGONAL } else { 0.0 });
        Ok(Self { logits: store.add_param(format!("{prefix}.logits"), init)?, channels })
    }

    pub fn forward(&self, ctx: &mut Ctx, f_sed: Var, f_soc: Var) -> Result<(Var, Var, Var)> {
        let batch = ctx.graph.shape(f_sed)[0];
        let logits = ctx.p(self.logits);
        let g = &mut *ctx.graph;
        let m = g.softmax(logits, 2)?;
        let m = g.stack(&vec![m; batch], 0)?;
        let (a, b) = cross_stitch(g, f_sed, f_soc, m)?;
        Ok((a, b, m))
    }
}

#[derive(Debug, Clone)]
pub enum Stitch {
    Dynamic(Dcsu),
    Static(StaticStitch),
}

impl Stitch {
    pub fn forward(&self, ctx: &mut Ctx, f_sed: Var, f_soc: Var) -> Result<(Var, Var, Var)> {
        match self {
            Self::Dynamic(d) => d.forward(ctx, f_sed, f_soc),
            Self::Static(s) => s.forward(ctx, f_sed, f_soc),
        }
    }
}

/// Residual cross-task attention on channel-last features:
/// `f_self + MHA(q = f_self, kv = f_other)`.
pub fn cross_task_attention(ctx: &mut Ctx, mha: &MultiHeadAttention, f_self: Var, f_other: Var) -> Result<Var> {
    if ctx.graph.shape(f_self) != ctx.graph.shape(f_other) {
        return Err(dim_err!(
            "cross-task attention: {:?} vs {:?}",
            ctx.graph.shape(f_self),
            ctx.graph.shape(f_other)
        ));
    }
    let attended = mha.forward(ctx, f_self, f_other)?;
    ctx.graph.add(f_self, attended)
}

/// `dense → ReLU → dropout → dense`.
#[derive(Debug, Clone)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
}

impl Head {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{prefix}.hidden"), input, hidden, rng)?,
            out: Linear::new(store, &format!("{prefix}.out"), hidden, classes, rng)?,
            dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.hidden.forward(ctx, x)?;
        let h = ctx.graph.relu(h);
        let h = ctx.graph.dropout(h, self.dropout, ctx.mode, &mut *ctx.rng)?;
        self.out.forward(ctx, h)
    }
}

fn conv_stack(store: &mut ParamStore, prefix: &str, cfg: &DystanConfig, rng: &mut dyn RngCore) -> Result<Vec<ConvBlock>> {
    let mut in_ch = cfg.in_channels;
    let mut blocks = Vec::with_capacity(cfg.shared_conv.len());
    for (i, c) in cfg.shared_conv.iter().enumerate() {
        blocks.push(ConvBlock::new(store, &format!("{prefix}.{i}"), in_ch, c.filters, c.kernel, cfg.bn_eps, cfg.bn_momentum, rng)?);
        in_ch = c.filters;
    }
    Ok(blocks)
}

fn run_stack(ctx: &mut Ctx, blocks: &[ConvBlock], mut x: Var) -> Result<Var> {
    for b in blocks {
        x = b.forward(ctx, x)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
enum Extractor {
    Shared(Vec<ConvBlock>),
    Private([Vec<ConvBlock>; 2]),
}

#[derive(Debug, Clone)]
struct MultiTask {
    extractor: Extractor,
    branches: [ConvBlock; 2],
    stitch: Stitch,
    attention: Option<[MultiHeadAttention; 2]>,
    lstm: Option<[BiLstm; 2]>,
    heads: [Head; 2],
}

impl MultiTask {
    fn build(store: &mut ParamStore, cfg: &DystanConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let extractor = match cfg.variant {
            Variant::Nsn => Extractor::Private([
                conv_stack(store, "sed.shared", cfg, rng)?,
                conv_stack(store, "soc.shared", cfg, rng)?,
            ]),
            _ => Extractor::Shared(conv_stack(store, "shared", cfg, rng)?),
        };
        let shared_out = cfg.shared_conv.last().expect("validated").filters;
        let width = cfg.branch_conv.filters;
        let mut branch = |task: &str, rng: &mut dyn RngCore| {
            ConvBlock::new(store, &format!("{task}.branch"), shared_out, width, cfg.branch_conv.kernel, cfg.bn_eps, cfg.bn_momentum, rng)
        };
        let branches = [branch("sed", rng)?, branch("soc", rng)?];
        let stitch = match cfg.variant {
            Variant::Cs => Stitch::Static(StaticStitch::new(store, "stitch", width)?),
            _ => Stitch::Dynamic(Dcsu::new(store, "dcsu", width, cfg.dcsu_hidden, rng)?),
        };
        let attention = match cfg.variant {
            Variant::Na => None,
            _ => Some([
                MultiHeadAttention::new(store, "sed.attn", width, cfg.attention_heads, rng)?,
                MultiHeadAttention::new(store, "soc.attn", width, cfg.attention_heads, rng)?,
            ]),
        };
        let lstm = match cfg.variant {
            Variant::Nb => None,
            _ => Some([
                BiLstm::new(store, "sed.lstm", width, cfg.lstm_hidden, rng)?,
                BiLstm::new(store, "soc.lstm", width, cfg.lstm_hidden, rng)?,
            ]),
        };
        let emb = cfg.embedding_dim();
        let heads = [
            Head::new(store, "sed.head", emb, cfg.head_hidden, cfg.num_sed, cfg.dropout, rng)?,
            Head::new(store, "soc.head", emb, cfg.head_hidden, cfg.num_soc, cfg.dropout, rng)?,
        ];
        Ok(Self { extractor, branches, stitch, attention, lstm, heads })
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<TaskOutputs> {
        let mut stages = Vec::new();
        let streams = match &self.extractor {
            Extractor::Shared(blocks) => {
                let s = run_stack(ctx, blocks, x)?;
                stages.push(("shared".to_string(), s));
                [s, s]
            }
            Extractor::Private(stacks) => {
                let a = run_stack(ctx, &stacks[0], x)?;
                let b = run_stack(ctx, &stacks[1], x)?;
                stages.push(("sed.shared".to_string(), a));
                stages.push(("soc.shared".to_string(), b));
                [a, b]
            }
        };
        let mut branch = [x, x];
        for k in 0..2 {
            branch[k] = self.branches[k].forward(ctx, streams[k])?;
            stages.push((format!("{}.branch", TASKS[k]), branch[k]));
        }
        let (a, b, m) = self.stitch.forward(ctx, branch[0], branch[1])?;
        stages.push(("sed.stitched".to_string(), a));
        stages.push(("soc.stitched".to_string(), b));
        let seq = [ctx.graph.transpose12(a)?, ctx.graph.transpose12(b)?];
        let attended = match &self.attention {
            Some(mha) => [
                cross_task_attention(ctx, &mha[0], seq[0], seq[1])?,
                cross_task_attention(ctx, &mha[1], seq[1], seq[0])?,
            ],
            None => seq,
        };
        let mut logits = [x, x];
        let mut embedding = [x, x];
        for k in 0..2 {
            stages.push((format!("{}.attended", TASKS[k]), attended[k]));
            let pooled_in = match &self.lstm {
                Some(l) => {
                    let h = l[k].forward(ctx, attended[k])?;
                    stages.push((format!("{}.lstm", TASKS[k]), h));
                    h
                }
                None => attended[k],
            };
            embedding[k] = ctx.graph.mean_axis(pooled_in, 1)?;
            logits[k] = self.heads[k].forward(ctx, embedding[k])?;
        }
        Ok(TaskOutputs {
            sed_logits: logits[0],
            soc_logits: logits[1],
            sed_embedding: embedding[0],
            soc_embedding: embedding[1],
            mixing: Some(m),
            stages,
        })
    }
}

/// Single-task tower of the baseline: convs, BiLSTM, GRU, time mean, head.
#[derive(Debug, Clone)]
struct Tower {
    convs: Vec<ConvBlock>,
    lstm: BiLstm,
    gru: Gru,
    head: Head,
}

impl Tower {
    fn build(store: &mut ParamStore, task: &str, classes: usize, cfg: &DystanConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let convs = conv_stack(store, &format!("{task}.conv"), cfg, rng)?;
        let width = cfg.shared_conv.last().expect("validated").filters;
        let lstm = BiLstm::new(store, &format!("{task}.lstm"), width, cfg.lstm_hidden, rng)?;
        let gru = Gru::new(store, &format!("{task}.gru"), 2 * cfg.lstm_hidden, cfg.lstm_hidden, rng)?;
        let head = Head::new(store, &format!("{task}.head"), cfg.lstm_hidden, cfg.head_hidden, classes, cfg.dropout, rng)?;
        Ok(Self { convs, lstm, gru, head })
    }

    fn forward(&self, ctx: &mut Ctx, task: &str, x: Var, stages: &mut Vec<(String, Var)>) -> Result<(Var, Var)> {
        let c = run_stack(ctx, &self.convs, x)?;
        stages.push((format!("{task}.conv"), c));
        let seq = ctx.graph.transpose12(c)?;
        let h = self.lstm.forward(ctx, seq)?;
        stages.push((format!("{task}.lstm"), h));
        let r = self.gru.forward(ctx, h)?;
        stages.push((format!("{task}.gru"), r));
        let emb = ctx.graph.mean_axis(r, 1)?;
        let logits = self.head.forward(ctx, emb)?;
        Ok((logits, emb))
    }
}

#[derive(Debug, Clone)]
enum Network {
    MultiTask(Box<MultiTask>),
    SingleTask(Box<[Tower; 2]>),
}

/// A network together with the store holding its weights.
#[derive(Debug, Clone)]
pub struct Dystan {
    config: DystanConfig,
    store: ParamStore,
    net: Network,
}

impl Dystan {
    /// Builds the configured variant with weights drawn from `seed`.
    pub fn new(config: DystanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match config.variant {
            Variant::Cbg => Network::SingleTask(Box::new([
                Tower::build(&mut store, "sed", config.num_sed, &config, &mut rng)?,
                Tower::build(&mut store, "soc", config.num_soc, &config, &mut rng)?,
            ])),
            _ => Network::MultiTask(Box::new(MultiTask::build(&mut store, &config, &mut rng)?)),
        };
        Ok(Self { config, store, net })
    }

    pub fn config(&self) -> &DystanConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// The dynamic cross-stitch unit, if this variant has one.
    pub fn dcsu(&self) -> Option<&Dcsu> {
        match &self.net {
            Network::MultiTask(m) => match &m.stitch {
                Stitch::Dynamic(d) => Some(d),
                Stitch::Static(_) => None,
            },
            Network::SingleTask(_) => None,
        }
    }

    /// Records a forward pass of `x` (`B×in_channels×seq_len`) on `graph`.
    pub fn forward(&mut self, graph: &mut Graph, x: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<TaskOutputs> {
        let mut store = std::mem::take(&mut self.store);
        let out = self.forward_with(&mut store, graph, x, mode, rng);
        self.store = store;
        out
    }

    /// Like [`Dystan::forward`] but reads weights from `store`, which must
    /// have been produced by this model (e.g. a perturbed clone).
    pub fn forward_with(
        &self,
        store: &mut ParamStore,
        graph: &mut Graph,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<TaskOutputs> {
        let s = graph.shape(x);
        if s.len() != 3 || s[1] != self.config.in_channels || s[2] != self.config.seq_len {
            return Err(dim_err!(
                "model input {s:?}, expected B×{}×{}",
                self.config.in_channels,
                self.config.seq_len
            ));
        }
        let mut ctx = Ctx::new(graph, store, mode, rng);
        match &self.net {
            Network::MultiTask(m) => m.forward(&mut ctx, x),
            Network::SingleTask(towers) => {
                let mut stages = Vec::new();
                let (sed_logits, sed_embedding) = towers[0].forward(&mut ctx, "sed", x, &mut stages)?;
                let (soc_logits, soc_embedding) = towers[1].forward(&mut ctx, "soc", x, &mut stages)?;
                Ok(TaskOutputs { sed_logits, soc_logits, sed_embedding, soc_embedding, mixing: None, stages })
            }
        }
    }

    /// Packs flattened channel-major windows into one `B×C×T` tensor.
    pub fn batch_tensor(&self, windows: &[&[f64]]) -> Result<Tensor> {
        let dim = self.config.in_channels * self.config.seq_len;
        let mut data = Vec::with_capacity(windows.len() * dim);
        for (i, w) in windows.iter().enumerate() {
            if w.len() != dim {
                return Err(dim_err!("window {i} has {} values, expected {dim}", w.len()));
            }
            data.extend_from_slice(w);
        }
        Tensor::new([windows.len(), self.config.in_channels, self.config.seq_len], data)
    }

    /// Eval-mode logits and embeddings for `windows`, in chunks of
    /// `batch_size`.
    pub fn infer(&mut self, windows: &[&[f64]], batch_size: usize) -> Result<Inference> {
        let mut out = Inference::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in windows.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let x = g.constant(self.batch_tensor(chunk)?);
            let o = self.forward(&mut g, x, Mode::Eval, &mut rng)?;
            out.sed_logits.extend(rows(g.value(o.sed_logits)));
            out.soc_logits.extend(rows(g.value(o.soc_logits)));
            out.sed_embedding.extend(rows(g.value(o.sed_embedding)));
            out.soc_embedding.extend(rows(g.value(o.soc_embedding)));
        }
        Ok(out)
    }
}
