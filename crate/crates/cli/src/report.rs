use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dystan::dataset::{SED_CLASSES, SOC_CLASSES};
use dystan::metrics::FoldReport;
use dystan::Error;

use crate::run::{fold_file, AggregateFile, AGGREGATE_FILE};

/// Artifacts of one training run, as stored on disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub aggregate: AggregateFile,
    pub folds: Vec<FoldReport>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())).into())
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("run directory {} does not exist", dir.display())).into());
    }
    let aggregate: AggregateFile = read_json(&dir.join(AGGREGATE_FILE))?;
    let folds = (0..aggregate.folds)
        .map(|f| read_json(&dir.join(fold_file(f, "report.json"))))
        .collect::<Result<Vec<FoldReport>>>()
        .with_context(|| format!("loading fold reports from {}", dir.display()))?;
    Ok(RunArtifacts { aggregate, folds })
}

fn class_names(task: &str) -> Vec<&'static str> {
    match task {
        "sed" => SED_CLASSES.iter().map(|c| c.code()).collect(),
        _ => SOC_CLASSES.iter().map(|c| c.code()).collect(),
    }
}

/// Flat `(scope, metric, value)` rows; both renderings are built from these.
pub fn rows(run: &RunArtifacts) -> Vec<(String, String, Option<f64>)> {
    let mut out = Vec::new();
    for (name, s) in &run.aggregate.metrics {
        out.push(("aggregate".into(), format!("{name}_mean"), Some(s.mean)));
        out.push(("aggregate".into(), format!("{name}_std"), Some(s.std)));
        out.push(("aggregate".into(), format!("{name}_n"), Some(s.n as f64)));
    }
    for r in &run.folds {
        let scope = format!("fold{}", r.fold);
        out.push((scope.clone(), "best_epoch".into(), Some(r.best_epoch as f64)));
        out.push((scope.clone(), "test_windows".into(), Some(r.test_windows as f64)));
        for (name, v) in r.scalars() {
            out.push((scope.clone(), name, v));
        }
        for (task, m) in [("sed", &r.sed), ("soc", &r.soc)] {
            let names = class_names(task);
            for (i, row) in m.confusion.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out.push((scope.clone(), format!("{task}_confusion[{}][{}]", names[i], names[j]), Some(*v)));
                }
            }
        }
    }
    out
}

pub fn render_csv(run: &RunArtifacts) -> String {
    let mut s = String::from("scope,metric,value\n");
    for (scope, metric, v) in rows(run) {
        let _ = writeln!(s, "{scope},{metric},{}", v.map_or_else(|| "NA".to_string(), |v| v.to_string()));
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

fn confusion_block(s: &mut String, task: &str, m: &[Vec<f64>]) {
    let names = class_names(task);
    let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(4);
    let _ = writeln!(s, "  {task} confusion (rows: true class, columns: predicted, row-normalized)");
    let _ = write!(s, "    {:w$}", "");
    for n in &names {
        let _ = write!(s, " {n:>w$}");
    }
    s.push('\n');
    for (i, row) in m.iter().enumerate() {
        let _ = write!(s, "    {:<w$}", names[i]);
        for v in row {
            let _ = write!(s, " {v:>w$.2}");
        }
        s.push('\n');
    }
}

pub fn render_text(run: &RunArtifacts) -> String {
    let a = &run.aggregate;
    let mut s = String::new();
    let _ = writeln!(s, "model {}  folds {}  seed {}", a.label, a.folds, a.seed);
    let _ = writeln!(s, "split {}", a.split_sha256);
    let _ = writeln!(s, "cluster metrics {}", a.cluster_metrics);
    let _ = writeln!(s, "\naggregate (mean ± sample std)");
    for (name, m) in &a.metrics {
        let _ = writeln!(s, "  {name:<30} {:.4} ± {:.4}  (n={})", m.mean, m.std, m.n);
    }
    for r in &run.folds {
        let _ = writeln!(s, "\nfold {}  seed {}  best epoch {}  test windows {}", r.fold, r.seed, r.best_epoch, r.test_windows);
        for (name, v) in r.scalars() {
            let _ = writeln!(s, "  {name:<30} {}", fmt_opt(v));
        }
        confusion_block(&mut s, "sed", &r.sed.confusion);
        confusion_block(&mut s, "soc", &r.soc.confusion);
    }
    s
}
