use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_records, CacheRecord, LabeledWindow, NUM_SED, NUM_SOC};
use crate::error::{input_err, Error, Result};
use crate::metrics::{
    accuracy, argmax, confusion_normalized, inter_class_distance, intra_class_distance, joint_accuracy, macro_f1, silhouette,
};
use crate::model::{Dystan, Variant};

pub const PREDICTIONS_HEADER: [&str; 5] = ["window_id", "sed_true", "sed_pred", "soc_true", "soc_pred"];

/// Per-task scores. Cluster metrics are `None` when the test split holds a
/// single class of that task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<f64>>,
    pub silhouette: Option<f64>,
    pub intra_class_distance: f64,
    pub inter_class_distance: Option<f64>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl TaskMetrics {
    pub fn compute(pred: &[usize], truth: &[usize], classes: usize, embeddings: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(pred, truth)?,
            macro_f1: macro_f1(pred, truth, classes)?,
            confusion: confusion_normalized(pred, truth, classes)?,
            silhouette: defined(silhouette(embeddings, truth))?,
            intra_class_distance: intra_class_distance(embeddings, truth)?,
            inter_class_distance: defined(inter_class_distance(embeddings, truth))?,
        })
    }
}

/// Test-split results of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub variant: Variant,
    /// 1-based epoch of the restored checkpoint.
    pub best_epoch: usize,
    pub test_windows: usize,
    pub joint_accuracy: f64,
    pub sed: TaskMetrics,
    pub soc: TaskMetrics,
}

impl FoldReport {
    /// Scalar metrics by name, in a fixed order.
    pub fn scalars(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![("joint_accuracy".to_string(), Some(self.joint_accuracy))];
        for (task, m) in [("sed", &self.sed), ("soc", &self.soc)] {
            out.push((format!("{task}_accuracy"), Some(m.accuracy)));
            out.push((format!("{task}_macro_f1"), Some(m.macro_f1)));
            out.push((format!("{task}_silhouette"), m.silhouette));
            out.push((format!("{task}_intra_class_distance"), Some(m.intra_class_distance)));
            out.push((format!("{task}_inter_class_distance"), m.inter_class_distance));
        }
        out
    }
}

/// Labels and argmax predictions per test window; ids index the dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub window_id: Vec<usize>,
    pub sed_true: Vec<usize>,
    pub sed_pred: Vec<usize>,
    pub soc_true: Vec<usize>,
    pub soc_pred: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvaluation {
    pub joint_accuracy: f64,
    pub sed: TaskMetrics,
    pub soc: TaskMetrics,
    pub predictions: Predictions,
    pub sed_embedding: Vec<Vec<f64>>,
    pub soc_embedding: Vec<Vec<f64>>,
}

impl FoldEvaluation {
    pub fn report(&self, fold: usize, seed: u64, variant: Variant, best_epoch: usize) -> FoldReport {
        FoldReport {
            fold,
            seed,
            variant,
            best_epoch,
            test_windows: self.predictions.window_id.len(),
            joint_accuracy: self.joint_accuracy,
            sed: self.sed.clone(),
            soc: self.soc.clone(),
        }
    }
}

/// Scores `model` (eval mode) on `windows[test]`.
pub fn evaluate_fold(model: &mut Dystan, windows: &[LabeledWindow], test: &[usize], batch_size: usize) -> Result<FoldEvaluation> {
    if test.is_empty() {
        return Err(input_err!("empty test split"));
    }
    let mut rows = Vec::with_capacity(test.len());
    for &i in test {
        rows.push(windows.get(i).ok_or_else(|| input_err!("test index {i} outside {} windows", windows.len()))?.features.as_slice());
    }
    let out = model.infer(&rows, batch_size)?;
    let predictions = Predictions {
        window_id: test.to_vec(),
        sed_true: test.iter().map(|&i| windows[i].sed as usize).collect(),
        sed_pred: out.sed_logits.iter().map(|r| argmax(r)).collect(),
        soc_true: test.iter().map(|&i| windows[i].soc as usize).collect(),
        soc_pred: out.soc_logits.iter().map(|r| argmax(r)).collect(),
    };
    let p = &predictions;
    Ok(FoldEvaluation {
        joint_accuracy: joint_accuracy(&p.sed_pred, &p.sed_true, &p.soc_pred, &p.soc_true)?,
        sed: TaskMetrics::compute(&p.sed_pred, &p.sed_true, NUM_SED, &out.sed_embedding)?,
        soc: TaskMetrics::compute(&p.soc_pred, &p.soc_true, NUM_SOC, &out.soc_embedding)?,
        sed_embedding: out.sed_embedding,
        soc_embedding: out.soc_embedding,
        predictions,
    })
}

pub fn write_predictions(path: impl AsRef<Path>, p: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(PREDICTIONS_HEADER).map_err(csv_err)?;
    for i in 0..p.window_id.len() {
        w.write_record([p.window_id[i], p.sed_true[i], p.sed_pred[i], p.soc_true[i], p.soc_pred[i]].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Predictions> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let header = r.headers().map_err(|e| Error::Io(e.into()))?;
    if header.iter().ne(PREDICTIONS_HEADER) {
        return Err(Error::Parse { line: 1, message: format!("unexpected predictions header {header:?}") });
    }
    let mut p = Predictions::default();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| Error::Parse { line, message: format!("`{s}`: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 5 {
            return Err(Error::Parse { line, message: format!("expected 5 fields, got {}", vals.len()) });
        }
        p.window_id.push(vals[0]);
        p.sed_true.push(vals[1]);
        p.sed_pred.push(vals[2]);
        p.soc_true.push(vals[3]);
        p.soc_pred.push(vals[4]);
    }
    Ok(p)
}

/// Writes one task's embeddings in the window-cache layout with the
/// embedding width as record dimension.
pub fn write_embeddings(path: impl AsRef<Path>, embeddings: &[Vec<f64>], windows: &[LabeledWindow], ids: &[usize]) -> Result<()> {
    if embeddings.len() != ids.len() {
        return Err(input_err!("{} embeddings for {} windows", embeddings.len(), ids.len()));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let records: Vec<CacheRecord> = embeddings
        .iter()
        .zip(ids)
        .map(|(e, &i)| CacheRecord {
            values: e.clone(),
            sed: windows[i].sed,
            soc: windows[i].soc,
            participant_id: windows[i].participant_id.clone(),
        })
        .collect();
    write_records(File::create(path)?, &records, dim)
}
