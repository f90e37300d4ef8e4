use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dystan::dataset::{modeling_windows, read_cache};
use dystan::metrics::{write_embeddings, write_predictions};
use dystan::model::{save_checkpoint, DystanConfig, Variant};
use dystan::training::{run_cv, write_epoch_log, Control, CvOptions, CvResult, EpochLog, Summary, TrainConfig};
use dystan::Error;
use serde::{Deserialize, Serialize};

use crate::manifest::{write_atomic, write_manifest, ManifestBuilder, MANIFEST_FILE};

pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Everything a training run depends on besides the data file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: DystanConfig,
    pub train: TrainConfig,
    pub cv: CvOptions,
}

impl RunConfig {
    /// Reads a config file; every field must be present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.cv.folds < 2 {
            return Err(Error::Config(format!("cv.folds must be at least 2, got {}", self.cv.folds)).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateFile {
    pub variant: Variant,
    pub label: String,
    pub folds: usize,
    pub seed: u64,
    pub split_sha256: String,
    /// How the cluster metrics were combined across folds.
    pub cluster_metrics: String,
    pub metrics: BTreeMap<String, Summary>,
}

pub fn variant_label(v: Variant) -> String {
    match v {
        Variant::Cbg => "CBG (stand-in single-task baseline)".into(),
        v => v.name().into(),
    }
}

pub fn fold_file(fold: usize, what: &str) -> String {
    format!("fold{fold}_{what}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_artifacts(out: &Path, cfg: &RunConfig, cv: &CvResult, windows: &[dystan::dataset::LabeledWindow]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in &cv.folds {
        let p = |what: &str| out.join(fold_file(f.fold, what));
        let test = &cv.plan.folds[f.fold].test;
        save_checkpoint(p("best.ckpt"), &f.model)?;
        write_json(&p("report.json"), &f.report)?;
        write_epoch_log(p("epochs.csv"), &f.training.logs)?;
        write_predictions(p("predictions.csv"), &f.evaluation.predictions)?;
        write_embeddings(p("sed_embeddings.bin"), &f.evaluation.sed_embedding, windows, test)?;
        write_embeddings(p("soc_embeddings.bin"), &f.evaluation.soc_embedding, windows, test)?;
        write_json(&p("standardization.json"), &f.standardization)?;
        for what in ["best.ckpt", "report.json", "epochs.csv", "predictions.csv", "sed_embeddings.bin", "soc_embeddings.bin", "standardization.json"] {
            written.push(p(what));
        }
    }
    let agg = AggregateFile {
        variant: cfg.model.variant,
        label: variant_label(cfg.model.variant),
        folds: cv.folds.len(),
        seed: cfg.train.seed,
        split_sha256: cv.plan.fingerprint(),
        cluster_metrics: "computed per fold on test-split embeddings, then averaged".into(),
        metrics: cv.aggregate.clone(),
    };
    write_json(&out.join(AGGREGATE_FILE), &agg)?;
    written.push(out.join(AGGREGATE_FILE));
    Ok(written)
}

fn progress(tag: &str, fold: usize, max_epochs: usize, log: &EpochLog) -> Control {
    eprintln!(
        "[{tag}] fold {fold} epoch {}/{max_epochs}: train {:.4} val {:.4} sed {:.3} soc {:.3} joint {:.3}",
        log.epoch, log.train_loss, log.val_loss, log.val_sed_acc, log.val_soc_acc, log.val_joint_acc
    );
    Control::Continue
}

/// Cross-validated training of one variant into `out`, manifest included.
pub fn train(data: &Path, cfg: &RunConfig, out: &Path, command: &str) -> Result<AggregateFile> {
    let manifest = ManifestBuilder::start(command);
    cfg.validate()?;
    let all = read_cache(data)?;
    let total = all.len();
    let windows = modeling_windows(all);
    if windows.len() < total {
        eprintln!("note: dropped {} windows outside the model classes", total - windows.len());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let tag = cfg.model.variant.name();
    let max_epochs = cfg.train.max_epochs;
    let observer = |fold: usize, log: &EpochLog| progress(tag, fold, max_epochs, log);
    let cv = run_cv(&windows, &cfg.model, &cfg.train, &cfg.cv, &observer)?;
    let artifacts = write_artifacts(out, cfg, &cv, &windows)?;
    let m = manifest.finish(serde_json::to_value(cfg)?, Some(cfg.train.seed), &[data.to_path_buf()], &artifacts)?;
    write_manifest(&out.join(MANIFEST_FILE), &m)?;
    let agg: AggregateFile = serde_json::from_str(&fs::read_to_string(out.join(AGGREGATE_FILE))?)?;
    println!("{}: joint accuracy {} over {} folds -> {}", agg.label, fmt_summary(agg.metrics.get("joint_accuracy")), agg.folds, out.display());
    Ok(agg)
}

pub const TABLE_METRICS: [(&str, &str); 5] = [
    ("sed_accuracy", "Sedentary Acc."),
    ("sed_macro_f1", "Sedentary Macro F1"),
    ("soc_accuracy", "Social Acc."),
    ("soc_macro_f1", "Social Macro F1"),
    ("joint_accuracy", "Joint Acc."),
];

fn fmt_summary(s: Option<&Summary>) -> String {
    s.map_or_else(|| "n/a".to_string(), |s| format!("{:.4}±{:.4}", s.mean, s.std))
}

fn joint_mean(rows: &[(Variant, AggregateFile)], v: Variant) -> Option<f64> {
    rows.iter().find(|(r, _)| *r == v).and_then(|(_, a)| a.metrics.get("joint_accuracy")).map(|s| s.mean)
}

/// `Some(holds)` when FULL, NA and NB are all present.
pub fn ordering_holds(rows: &[(Variant, AggregateFile)]) -> Option<bool> {
    let full = joint_mean(rows, Variant::Full)?;
    let na = joint_mean(rows, Variant::Na)?;
    let nb = joint_mean(rows, Variant::Nb)?;
    Some(full >= na && na >= nb)
}

pub fn ablation_csv(rows: &[(Variant, AggregateFile)]) -> String {
    let mut s = String::from("model");
    for (key, _) in TABLE_METRICS {
        s.push(',');
        s.push_str(key);
    }
    s.push_str(",split_sha256\n");
    for (v, agg) in rows {
        s.push_str(v.name());
        for (key, _) in TABLE_METRICS {
            let _ = write!(s, ",{}", fmt_summary(agg.metrics.get(key)));
        }
        let _ = writeln!(s, ",{}", agg.split_sha256);
    }
    s
}

pub fn ablation_text(rows: &[(Variant, AggregateFile)]) -> String {
    let mut table: Vec<Vec<String>> = vec![std::iter::once("Model".to_string()).chain(TABLE_METRICS.iter().map(|(_, h)| h.to_string())).collect()];
    for (v, agg) in rows {
        table.push(std::iter::once(v.name().to_string()).chain(TABLE_METRICS.iter().map(|(k, _)| fmt_summary(agg.metrics.get(*k)))).collect());
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).enumerate().map(|(i, (cell, &w))| {
            if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") }
        }).collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
    }
    if let Some((_, first)) = rows.first() {
        let _ = writeln!(s, "\nmean ± sample std over {} folds; split {}", first.folds, first.split_sha256);
    }
    match ordering_holds(rows) {
        Some(true) => s.push_str("ordering FULL >= NA >= NB on mean joint accuracy: holds\n"),
        Some(false) => s.push_str("ordering FULL >= NA >= NB on mean joint accuracy: VIOLATED\n"),
        None => {}
    }
    s
}

/// Trains each variant on the same splits and seeds and writes the
/// comparison table.
pub fn ablate(data: &Path, base: &RunConfig, out: &Path, variants: &[Variant]) -> Result<Vec<(Variant, AggregateFile)>> {
    let manifest = ManifestBuilder::start("ablate");
    base.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &v in variants {
        let mut cfg = base.clone();
        cfg.model.variant = v;
        let dir = out.join(v.name().to_lowercase());
        let agg = train(data, &cfg, &dir, &format!("ablate:{}", v.name().to_lowercase()))?;
        artifacts.push(dir.join(MANIFEST_FILE));
        artifacts.push(dir.join(AGGREGATE_FILE));
        rows.push((v, agg));
    }
    if let Some((_, first)) = rows.first() {
        if let Some((v, _)) = rows.iter().find(|(_, a)| a.split_sha256 != first.split_sha256) {
            return Err(Error::Integrity(format!("{} was evaluated on different folds", v.name())).into());
        }
    }
    let csv_path = out.join("ablation.csv");
    let txt_path = out.join("ablation.txt");
    write_atomic(&csv_path, ablation_csv(&rows).as_bytes())?;
    let text = ablation_text(&rows);
    write_atomic(&txt_path, text.as_bytes())?;
    print!("{text}");
    artifacts.push(csv_path);
    artifacts.push(txt_path);
    let config = serde_json::json!({
        "run": base,
        "variants": variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
    });
    let m = manifest.finish(config, Some(base.train.seed), &[data.to_path_buf()], &artifacts)?;
    write_manifest(&out.join(MANIFEST_FILE), &m)?;
    Ok(rows)
}
