//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to check.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::param::ParamStore;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst element, for diagnostics.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self { max_rel_error: 0.0, worst: String::new(), checked: 0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            if err > self.max_rel_error {
                self.max_rel_error = err;
            }
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", at());
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients
/// from inflating the ratio with rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Usage(format!("gradient check needs a scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Checks d f / d inputs, where `f` records a scalar on a fresh graph from
/// variables holding `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar(&g, out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> =
        vars.iter().zip(inputs).map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))).collect();

    let mut report = GradCheckReport::new();
    let mut work = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.record(grads.data()[j], (plus - minus) / (2.0 * h), || format!("input {i}[{j}]"));
        }
    }
    Ok(report)
}

/// Like [`check_inputs`] for a non-scalar `f`, reduced to a scalar by a fixed
/// pseudo-random projection so that every output element participates.
pub fn check_outputs<F>(inputs: &[Tensor], h: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inputs(inputs, h, |g, vars| {
        let out = f(g, vars)?;
        let proj = projection(g.shape(out), seed);
        let p = g.constant(proj);
        let prod = g.mul(out, p)?;
        Ok(g.sum(prod))
    })
}

/// Deterministic weights in `[-1, 1]` for [`check_outputs`].
pub fn projection(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    Tensor::from_fn(shape.to_vec(), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

/// Checks gradients with respect to the parameters in `store`. `build`
/// records a scalar loss using the store and must be deterministic.
/// `stride` > 1 checks every `stride`-th element of each parameter.
pub fn check_store<F>(store: &mut ParamStore, h: f64, stride: usize, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<(Graph, Var)>,
{
    let stride = stride.max(1);
    let (mut g, loss) = build(store)?;
    g.backward(loss)?;
    store.zero_grads();
    store.accumulate_grads(&g);
    let analytic: Vec<Option<Tensor>> = store.params().iter().map(|p| p.grad.clone()).collect();
    store.zero_grads();

    let mut report = GradCheckReport::new();
    for (i, grad) in analytic.iter().enumerate() {
        let n = store.params()[i].value.len();
        for j in (0..n).step_by(stride) {
            let orig = store.params()[i].value.data()[j];
            store.params_mut()[i].value.data_mut()[j] = orig + h;
            let (g, l) = build(store)?;
            let plus = scalar(&g, l)?;
            store.params_mut()[i].value.data_mut()[j] = orig - h;
            let (g, l) = build(store)?;
            let minus = scalar(&g, l)?;
            store.params_mut()[i].value.data_mut()[j] = orig;
            let a = grad.as_ref().map_or(0.0, |t| t.data()[j]);
            let name = &store.params()[i].name;
            report.record(a, (plus - minus) / (2.0 * h), || format!("{name}[{j}]"));
        }
    }
    Ok(report)
}
