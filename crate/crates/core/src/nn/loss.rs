use crate::error::{dim_err, input_err, Result};
use crate::nn::graph::{softmax_along, Graph, Op, Var};
use crate::nn::tensor::Tensor;

pub(crate) struct CrossEntropySaved {
    probs: Vec<f64>,
    labels: Vec<usize>,
    weights: Vec<f64>,
    norm: f64,
}

impl Graph {
    /// Class-weighted cross-entropy of `logits: B×K`, normalized by the sum
    /// of the weights of the target classes:
    /// `Σ_i w[y_i]·(−log softmax(logits_i)[y_i]) / Σ_i w[y_i]`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 {
            return Err(dim_err!("cross entropy expects B×K logits, got {s:?}"));
        }
        let (b, k) = (s[0], s[1]);
        if labels.len() != b {
            return Err(dim_err!("cross entropy: {} labels for batch of {b}", labels.len()));
        }
        if weights.len() != k {
            return Err(dim_err!("cross entropy: {} class weights for {k} classes", weights.len()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(input_err!("label {bad} out of range for {k} classes"));
        }
        let probs = softmax_along(self.value(logits).data(), &[b, k], 1);
        let lv = self.value(logits).data();
        let mut total = 0.0;
        let mut norm = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += weights[y] * (lse - row[y]);
            norm += weights[y];
        }
        if norm <= 0.0 {
            return Err(input_err!("cross entropy: target class weights sum to {norm}"));
        }
        let saved = CrossEntropySaved { probs, labels: labels.to_vec(), weights: weights.to_vec(), norm };
        Ok(self.push(Tensor::scalar(total / norm), Op::CrossEntropy(saved), vec![logits]))
    }
}

pub(crate) fn backward(saved: &CrossEntropySaved, g: f64) -> Vec<f64> {
    let k = saved.weights.len();
    let mut d = saved.probs.clone();
    for (i, &y) in saved.labels.iter().enumerate() {
        let scale = g * saved.weights[y] / saved.norm;
        let row = &mut d[i * k..(i + 1) * k];
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    d
}
