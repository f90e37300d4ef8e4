//! Classification and embedding-space evaluation.

mod report;

pub use report::{
    evaluate_fold, read_predictions, write_embeddings, write_predictions, FoldEvaluation, FoldReport, Predictions, TaskMetrics,
    PREDICTIONS_HEADER,
};

use crate::error::{dim_err, input_err, Error, Result};

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(input_err!("{} predictions for {} labels", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(input_err!("no samples to score"));
    }
    Ok(())
}

fn check_range(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= k) {
        Some(y) => Err(input_err!("label {y} out of range for {k} classes")),
        None => Ok(()),
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Fraction of samples where both tasks are right.
pub fn joint_accuracy(sed_pred: &[usize], sed_truth: &[usize], soc_pred: &[usize], soc_truth: &[usize]) -> Result<f64> {
    check_pair(sed_pred, sed_truth)?;
    check_pair(soc_pred, soc_truth)?;
    if sed_pred.len() != soc_pred.len() {
        return Err(input_err!("task lengths differ: {} vs {}", sed_pred.len(), soc_pred.len()));
    }
    let hits = (0..sed_pred.len()).filter(|&i| sed_pred[i] == sed_truth[i] && soc_pred[i] == soc_truth[i]).count();
    Ok(hits as f64 / sed_pred.len() as f64)
}

/// Raw `K×K` counts, rows indexed by the true class.
pub fn confusion_counts(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check_pair(pred, truth)?;
    check_range(pred, k)?;
    check_range(truth, k)?;
    let mut m = vec![vec![0; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Rows divided by the true-class count; all-zero row for an absent class.
pub fn confusion_normalized(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<f64>>> {
    Ok(confusion_counts(pred, truth, k)?
        .into_iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
        })
        .collect())
}

/// Unweighted mean of per-class F1 over all `k` classes; a zero denominator
/// makes that class contribute 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    let m = confusion_counts(pred, truth, k)?;
    let mut total = 0.0;
    for c in 0..k {
        let tp = m[c][c] as f64;
        let predicted: usize = (0..k).map(|r| m[r][c]).sum();
        let actual: usize = m[c].iter().sum();
        if predicted == 0 || actual == 0 {
            continue;
        }
        let (p, r) = (tp / predicted as f64, tp / actual as f64);
        if p + r > 0.0 {
            total += 2.0 * p * r / (p + r);
        }
    }
    Ok(total / k as f64)
}

fn check_embeddings(emb: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if emb.len() != labels.len() {
        return Err(input_err!("{} embeddings for {} labels", emb.len(), labels.len()));
    }
    if emb.is_empty() {
        return Err(input_err!("no embeddings"));
    }
    let d = emb[0].len();
    if let Some(i) = emb.iter().position(|e| e.len() != d) {
        return Err(dim_err!("embedding {i} has width {}, expected {d}", emb[i].len()));
    }
    Ok(())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Present classes in ascending order with their member indices.
fn groups(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes.into_iter().map(|c| (c, (0..labels.len()).filter(|&i| labels[i] == c).collect())).collect()
}

fn centroid(emb: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; emb[members[0]].len()];
    for &i in members {
        c.iter_mut().zip(&emb[i]).for_each(|(a, b)| *a += b);
    }
    c.iter_mut().for_each(|v| *v /= members.len() as f64);
    c
}

/// Mean silhouette with Euclidean distance. Members of singleton clusters
/// score 0.
pub fn silhouette(emb: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_embeddings(emb, labels)?;
    let gs = groups(labels);
    if gs.len() < 2 {
        return Err(Error::UndefinedMetric("silhouette needs at least two classes".into()));
    }
    let n = emb.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(&emb[i], &emb[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut total = 0.0;
    for (gi, (_, members)) in gs.iter().enumerate() {
        if members.len() == 1 {
            continue;
        }
        for &i in members {
            let a = members.iter().filter(|&&j| j != i).map(|&j| dist[i * n + j]).sum::<f64>() / (members.len() - 1) as f64;
            let b = gs
                .iter()
                .enumerate()
                .filter(|(gj, _)| *gj != gi)
                .map(|(_, (_, other))| other.iter().map(|&j| dist[i * n + j]).sum::<f64>() / other.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Ok(total / n as f64)
}

/// Unweighted mean over present classes of the mean distance to the class
/// centroid.
pub fn intra_class_distance(emb: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_embeddings(emb, labels)?;
    let gs = groups(labels);
    let per_class: f64 = gs
        .iter()
        .map(|(_, members)| {
            let c = centroid(emb, members);
            members.iter().map(|&i| euclid(&emb[i], &c)).sum::<f64>() / members.len() as f64
        })
        .sum();
    Ok(per_class / gs.len() as f64)
}

/// Mean pairwise distance between the centroids of present classes.
pub fn inter_class_distance(emb: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_embeddings(emb, labels)?;
    let gs = groups(labels);
    if gs.len() < 2 {
        return Err(Error::UndefinedMetric("inter-class distance needs at least two classes".into()));
    }
    let cs: Vec<Vec<f64>> = gs.iter().map(|(_, m)| centroid(emb, m)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..cs.len() {
        for j in i + 1..cs.len() {
            total += euclid(&cs[i], &cs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
