//! Batch normalization over the batch and time axes of `B×C×T` tensors.

use crate::error::{config_err, dim_err, Result};
use crate::nn::graph::{Graph, InputGrads, Op, Var};
use crate::nn::tensor::Tensor;
use crate::nn::Mode;

pub(crate) struct BatchNormSaved {
    /// Normalized input `(x - mean) * invstd`.
    xhat: Vec<f64>,
    invstd: Vec<f64>,
    /// Train mode: statistics depend on `x` and feed back into its gradient.
    batch_stats: bool,
}

/// Running statistics owned by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<'a> {
    pub mean: &'a [f64],
    pub var: &'a [f64],
}

impl Graph {
    /// Returns the normalized output and, in train mode, the updated
    /// running `(mean, var)` to store back into the layer.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        momentum: f64,
        mode: Mode,
        running: RunningStats<'_>,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        if eps <= 0.0 {
            return Err(config_err!("batch norm eps must be positive, got {eps}"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(config_err!("batch norm momentum must lie in [0, 1], got {momentum}"));
        }
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(dim_err!("batchnorm1d expects B×C×T, got {s:?}"));
        }
        let (b, c, t) = (s[0], s[1], s[2]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(dim_err!("batchnorm1d: {name} {:?} for {c} channels", self.shape(v)));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(dim_err!("batchnorm1d: running stats sized for {} channels", running.mean.len()));
        }
        let count = b * t;
        if mode == Mode::Train && count < 2 {
            return Err(dim_err!("batchnorm1d in train mode needs B*T >= 2, got {count}"));
        }
        let xv = self.value(x).data();
        let (mean, var, update) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for n in 0..b {
                        sum += xv[(n * c + ch) * t..(n * c + ch + 1) * t].iter().sum::<f64>();
                    }
                    let mu = sum / count as f64;
                    let mut sq = 0.0;
                    for n in 0..b {
                        sq += xv[(n * c + ch) * t..(n * c + ch + 1) * t].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = sq / count as f64;
                }
                let unbias = count as f64 / (count - 1) as f64;
                let new_mean = running.mean.iter().zip(&mean).map(|(r, m)| (1.0 - momentum) * r + momentum * m).collect();
                let new_var =
                    running.var.iter().zip(&var).map(|(r, v)| (1.0 - momentum) * r + momentum * v * unbias).collect();
                (mean, var, Some((new_mean, new_var)))
            }
            Mode::Eval => (running.mean.to_vec(), running.var.to_vec(), None),
        };
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for n in 0..b {
            for ch in 0..c {
                let span = (n * c + ch) * t..(n * c + ch + 1) * t;
                for i in span {
                    let h = (xv[i] - mean[ch]) * invstd[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let value = Tensor::new(s, out)?;
        let saved = BatchNormSaved { xhat, invstd, batch_stats: mode == Mode::Train };
        Ok((self.push(value, Op::BatchNorm(saved), vec![x, gamma, beta]), update))
    }
}

pub(crate) fn backward(saved: &BatchNormSaved, x: &Tensor, gamma: &Tensor, g: &[f64]) -> InputGrads {
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let count = (b * t) as f64;
    let gam = gamma.data();
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let spans = (0..b).map(|n| (n * c + ch) * t..(n * c + ch + 1) * t);
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for span in spans.clone() {
            for i in span {
                sum_g += g[i];
                sum_gx += g[i] * saved.xhat[i];
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let k = gam[ch] * saved.invstd[ch];
        for span in spans {
            for i in span {
                dx[i] = if saved.batch_stats {
                    k * (g[i] - sum_g / count - saved.xhat[i] * sum_gx / count)
                } else {
                    k * g[i]
                };
            }
        }
    }
    vec![(0, dx), (1, dgamma), (2, dbeta)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn setup(g: &mut Graph, x: Tensor, c: usize) -> (Var, Var, Var) {
        let x = g.constant(x);
        let gamma = g.constant(Tensor::full([c], 1.0));
        let beta = g.constant(Tensor::zeros([c]));
        (x, gamma, beta)
    }

    #[test]
    fn constant_channel_yields_beta() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([3, 2, 5], 4.2));
        let gamma = g.constant(Tensor::new([2], vec![2.0, -1.0]).unwrap());
        let beta = g.constant(Tensor::new([2], vec![0.3, -0.7]).unwrap());
        let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
        let (y, _) = g
            .batchnorm1d(x, gamma, beta, 1e-5, 0.1, Mode::Train, RunningStats { mean: &rm, var: &rv })
            .unwrap();
        let v = g.value(y);
        for n in 0..3 {
            for t in 0..5 {
                assert_eq!(v.at(&[n, 0, t]), 0.3);
                assert_eq!(v.at(&[n, 1, t]), -0.7);
            }
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut g = Graph::new();
        let xs = Tensor::from_fn([4, 3, 10], |i| ((i * 37) % 23) as f64 * 0.7 + (i % 3) as f64 * 5.0);
        let (x, gamma, beta) = setup(&mut g, xs, 3);
        let (rm, rv) = (vec![0.0; 3], vec![1.0; 3]);
        let eps = 1e-5;
        let (y, update) =
            g.batchnorm1d(x, gamma, beta, eps, 0.1, Mode::Train, RunningStats { mean: &rm, var: &rv }).unwrap();
        let v = g.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| (0..10).map(move |t| (n, t))).map(|(n, t)| v.at(&[n, ch, t])).collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
        let (nm, nv) = update.unwrap();
        assert!(nm.iter().all(|m| *m != 0.0));
        assert_eq!(nv.len(), 3);
    }

    #[test]
    fn eval_mode_with_identity_stats() {
        let mut g = Graph::new();
        let xs = Tensor::from_fn([2, 2, 4], |i| i as f64 - 3.0);
        let (x, gamma, beta) = setup(&mut g, xs.clone(), 2);
        let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
        let eps = 1e-5;
        let (y, update) =
            g.batchnorm1d(x, gamma, beta, eps, 0.1, Mode::Eval, RunningStats { mean: &rm, var: &rv }).unwrap();
        assert!(update.is_none());
        for (a, b) in g.value(y).data().iter().zip(xs.data()) {
            assert!((a - b / (1.0 + eps).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_eps_and_tiny_batch() {
        let mut g = Graph::new();
        let (x, gamma, beta) = setup(&mut g, Tensor::zeros([1, 2, 1]), 2);
        let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
        let stats = RunningStats { mean: &rm, var: &rv };
        assert!(matches!(g.batchnorm1d(x, gamma, beta, 0.0, 0.1, Mode::Eval, stats.clone()), Err(Error::Config(_))));
        assert!(g.batchnorm1d(x, gamma, beta, 1e-5, 0.1, Mode::Train, stats).is_err());
    }
}
