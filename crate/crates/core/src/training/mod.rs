//! Joint loss, the per-fold training loop and the cross-validation driver.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{grouped_kfold, stratified_kfold, ClassWeights, LabeledWindow, SplitPlan, NUM_SED, NUM_SOC};
use crate::dsp::{Standardization, NUM_CHANNELS};
use crate::error::{config_err, input_err, Error, Result};
use crate::metrics::{argmax, evaluate_fold, FoldEvaluation, FoldReport};
use crate::model::{Dystan, DystanConfig, TaskOutputs};
use crate::nn::{Adam, Graph, Mode, Var};

/// Validation quantity used to pick the restored checkpoint. Accuracies
/// are maximized, the loss minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMetric {
    JointAccuracy,
    SedAccuracy,
    SocAccuracy,
    ValLoss,
}

impl SelectMetric {
    /// Score where larger is better.
    fn score(self, log: &EpochLog) -> f64 {
        match self {
            Self::JointAccuracy => log.val_joint_acc,
            Self::SedAccuracy => log.val_sed_acc,
            Self::SocAccuracy => log.val_soc_acc,
            Self::ValLoss => -log.val_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub select_metric: SelectMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 64, max_epochs: 50, seed: 0, select_metric: SelectMetric::JointAccuracy }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(config_err!("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_sed_acc: f64,
    pub val_soc_acc: f64,
    pub val_joint_acc: f64,
    pub wall_time_s: f64,
}

pub const EPOCH_LOG_HEADER: [&str; 7] =
    ["epoch", "train_loss", "val_loss", "val_sed_acc", "val_soc_acc", "val_joint_acc", "wall_time_s"];

pub fn write_epoch_log(path: impl AsRef<Path>, logs: &[EpochLog]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(e.into());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(EPOCH_LOG_HEADER).map_err(csv_err)?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            l.train_loss.to_string(),
            l.val_loss.to_string(),
            l.val_sed_acc.to_string(),
            l.val_soc_acc.to_string(),
            l.val_joint_acc.to_string(),
            format!("{:.3}", l.wall_time_s),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Whether training continues after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// `L_sed + L_soc`, each a class-weighted cross-entropy.
pub fn joint_loss(g: &mut Graph, out: &TaskOutputs, sed: &[usize], soc: &[usize], weights: &ClassWeights) -> Result<Var> {
    let a = g.weighted_cross_entropy(out.sed_logits, sed, &weights.sed)?;
    let b = g.weighted_cross_entropy(out.soc_logits, soc, &weights.soc)?;
    g.add(a, b)
}

/// Weighted cross-entropy of plain logit rows, `Σ w·ce / Σ w`.
pub fn cross_entropy_value(logits: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += weights[y] * (lse - row[y]);
        norm += weights[y];
    }
    total / norm
}

/// Seeded per-epoch reshuffle of the training indices into batches; the
/// final short batch is kept.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    order: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSchedule {
    pub fn new(train: &[usize], batch_size: usize, seed: u64) -> Self {
        Self { order: train.to_vec(), batch_size: batch_size.max(1), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_epoch(&mut self) -> std::slice::Chunks<'_, usize> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.batch_size)
    }
}

#[derive(Debug, Clone)]
pub struct FoldTraining {
    pub logs: Vec<EpochLog>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
}

fn labels(windows: &[LabeledWindow], idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
    idx.iter().map(|&i| (windows[i].sed as usize, windows[i].soc as usize)).unzip()
}

/// Trains `model` on `windows[train]`, scoring `windows[val]` after every
/// epoch, and leaves the weights of the best epoch in place. Class weights
/// come from the training split. `observer` sees each epoch's log and may
/// end training early.
pub fn train_fold(
    model: &mut Dystan,
    windows: &[LabeledWindow],
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog) -> Control,
) -> Result<FoldTraining> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(input_err!("train ({}) and validation ({}) splits must be nonempty", train.len(), val.len()));
    }
    if let Some(&i) = train.iter().chain(val).find(|&&i| i >= windows.len()) {
        return Err(input_err!("split index {i} outside {} windows", windows.len()));
    }
    let weights = ClassWeights::from_windows(train.iter().map(|&i| &windows[i]))?;
    let (val_sed, val_soc) = labels(windows, val);
    let val_rows: Vec<&[f64]> = val.iter().map(|&i| windows[i].features.as_slice()).collect();

    let mut schedule = BatchSchedule::new(train, cfg.batch_size, cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let adam = Adam::new(cfg.lr);
    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, crate::nn::StoreSnapshot)> = None;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        for (b, batch) in schedule.next_epoch().enumerate() {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| windows[i].features.as_slice()).collect();
            let (sed, soc) = labels(windows, batch);
            let mut g = Graph::new();
            let x = g.constant(model.batch_tensor(&rows)?);
            let out = model.forward(&mut g, x, Mode::Train, &mut dropout_rng)?;
            let loss = joint_loss(&mut g, &out, &sed, &soc, &weights)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss {value} at epoch {epoch}, batch {}", b + 1)));
            }
            g.backward(loss)?;
            let store = model.store_mut();
            store.zero_grads();
            store.accumulate_grads(&g);
            adam.step(store)?;
            loss_sum += value * batch.len() as f64;
        }

        let out = model.infer(&val_rows, cfg.batch_size)?;
        let sed_pred: Vec<usize> = out.sed_logits.iter().map(|r| argmax(r)).collect();
        let soc_pred: Vec<usize> = out.soc_logits.iter().map(|r| argmax(r)).collect();
        let val_loss = cross_entropy_value(&out.sed_logits, &val_sed, &weights.sed)
            + cross_entropy_value(&out.soc_logits, &val_soc, &weights.soc);
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss {val_loss} at epoch {epoch}")));
        }
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_sed_acc: crate::metrics::accuracy(&sed_pred, &val_sed)?,
            val_soc_acc: crate::metrics::accuracy(&soc_pred, &val_soc)?,
            val_joint_acc: crate::metrics::joint_accuracy(&sed_pred, &val_sed, &soc_pred, &val_soc)?,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let score = cfg.select_metric.score(&log);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.store().snapshot()));
        }
        let control = observer(&log);
        logs.push(log);
        if control == Control::Stop {
            break;
        }
    }
    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    model.store_mut().restore(&snapshot);
    Ok(FoldTraining { logs, best_epoch })
}

/// Mean and sample standard deviation (`n − 1`; 0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Some(Self { mean, std, n })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Per-metric summaries over folds, keyed by [`FoldReport::scalars`] names.
/// Metrics undefined on a fold are summarized over the folds where they
/// are defined.
pub fn aggregate(reports: &[FoldReport]) -> BTreeMap<String, Summary> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.scalars() {
            let slot = values.entry(name).or_default();
            if let Some(v) = v {
                slot.push(v);
            }
        }
    }
    values.into_iter().filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvOptions {
    pub folds: usize,
    pub group_by_participant: bool,
    pub parallel_folds: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { folds: 5, group_by_participant: false, parallel_folds: false }
    }
}

impl FromStr for SelectMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| config_err!("unknown selection metric `{s}`"))
    }
}

/// Everything produced for one fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub seed: u64,
    pub standardization: Standardization,
    pub training: FoldTraining,
    pub evaluation: FoldEvaluation,
    pub report: FoldReport,
    pub model: Dystan,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub plan: SplitPlan,
    pub folds: Vec<FoldOutcome>,
    pub aggregate: BTreeMap<String, Summary>,
}

/// Builds the fold plan used by [`run_cv`] for `windows` with base `seed`.
pub fn plan_folds(windows: &[LabeledWindow], opts: &CvOptions, seed: u64) -> Result<SplitPlan> {
    let labels: Vec<(u8, u8)> = windows.iter().map(|w| (w.sed, w.soc)).collect();
    if opts.group_by_participant {
        let participants: Vec<String> = windows.iter().map(|w| w.participant_id.clone()).collect();
        grouped_kfold(&labels, &participants, opts.folds, seed)
    } else {
        stratified_kfold(&labels, opts.folds, seed)
    }
}

/// Per-epoch callback of [`run_cv`]: `(fold, log)`.
pub type EpochObserver<'a> = dyn Fn(usize, &EpochLog) -> Control + Sync + 'a;

fn run_fold(
    windows: &[LabeledWindow],
    split: &crate::dataset::FoldSplit,
    fold: usize,
    model_cfg: &DystanConfig,
    train_cfg: &TrainConfig,
    observer: &EpochObserver,
) -> Result<FoldOutcome> {
    let seed = train_cfg.seed.wrapping_add(fold as u64);
    let standardization = Standardization::fit(split.train.iter().map(|&i| windows[i].features.as_slice()), NUM_CHANNELS)?;
    let mut data = windows.to_vec();
    for w in &mut data {
        standardization.apply(&mut w.features)?;
    }
    let mut model = Dystan::new(model_cfg.clone(), seed)?;
    let cfg = TrainConfig { seed, ..train_cfg.clone() };
    let training = train_fold(&mut model, &data, &split.train, &split.val, &cfg, &mut |log| observer(fold, log))?;
    let evaluation = evaluate_fold(&mut model, &data, &split.test, cfg.batch_size)?;
    let report = evaluation.report(fold, seed, model_cfg.variant, training.best_epoch);
    Ok(FoldOutcome { fold, seed, standardization, training, evaluation, report, model })
}

/// k-fold cross-validation: one fresh model per fold seeded `seed + fold`,
/// standardization fitted on that fold's training split, best checkpoint
/// scored on the test split.
pub fn run_cv(
    windows: &[LabeledWindow],
    model_cfg: &DystanConfig,
    train_cfg: &TrainConfig,
    opts: &CvOptions,
    observer: &EpochObserver,
) -> Result<CvResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if let Some(w) = windows.iter().find(|w| w.sed as usize >= NUM_SED || w.soc as usize >= NUM_SOC) {
        return Err(input_err!("window labelled ({}, {}) is outside the model classes", w.sed, w.soc));
    }
    let plan = plan_folds(windows, opts, train_cfg.seed)?;
    let folds = if opts.parallel_folds {
        std::thread::scope(|s| {
            let handles: Vec<_> = plan
                .folds
                .iter()
                .enumerate()
                .map(|(f, split)| s.spawn(move || run_fold(windows, split, f, model_cfg, train_cfg, observer)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect::<Result<Vec<_>>>()
        })?
    } else {
        plan.folds
            .iter()
            .enumerate()
            .map(|(f, split)| run_fold(windows, split, f, model_cfg, train_cfg, observer))
            .collect::<Result<Vec<_>>>()?
    };
    let reports: Vec<FoldReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(CvResult { plan, aggregate: aggregate(&reports), folds })
}
