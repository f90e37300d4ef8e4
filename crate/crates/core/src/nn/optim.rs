use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::ParamStore;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Updates every parameter from its gradient, then clears the gradients.
    /// Fails without touching anything if a parameter has no gradient.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.params().iter().find(|p| p.grad.is_none()) {
            return Err(Error::Usage(format!("parameter `{}` has no gradient", p.name)));
        }
        for p in store.params_mut() {
            let grad = p.grad.take().expect("checked above");
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let values = p.value.data_mut();
            for (((w, g), m), v) in values.iter_mut().zip(grad.data()).zip(&mut p.adam_m).zip(&mut p.adam_v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store_with(value: f64) -> (ParamStore, crate::nn::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add_param("w", Tensor::full([1], value)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut s, id) = store_with(0.7);
        s.param_mut(id).grad = Some(Tensor::zeros([1]));
        Adam::new(1e-3).step(&mut s).unwrap();
        let p = s.param(id);
        assert_eq!(p.value.data(), &[0.7]);
        assert_eq!(p.adam_m, vec![0.0]);
        assert_eq!(p.adam_v, vec![0.0]);
        assert_eq!(p.step_count, 1);
        assert!(p.grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [3.0, -0.02] {
            let (mut s, id) = store_with(1.0);
            s.param_mut(id).grad = Some(Tensor::full([1], g));
            let adam = Adam::new(1e-3);
            adam.step(&mut s).unwrap();
            let delta = s.param(id).value.data()[0] - 1.0;
            // bias-corrected first step: lr * |g| / (|g| + eps)
            let expect = -adam.lr * g.signum() * g.abs() / (g.abs() + adam.eps);
            assert!((delta - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let (mut s, _) = store_with(1.0);
        assert!(matches!(Adam::new(1e-3).step(&mut s), Err(Error::Usage(_))));
    }

    #[test]
    fn three_steps_on_square_match_scalar_oracle() {
        let lr = 0.1;
        let (mut s, id) = store_with(1.0);
        let adam = Adam::new(lr);
        // hand-rolled scalar Adam on f(w) = w^2
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);

            let cur = s.param(id).value.data()[0];
            s.param_mut(id).grad = Some(Tensor::full([1], 2.0 * cur));
            adam.step(&mut s).unwrap();
            assert!((s.param(id).value.data()[0] - w).abs() < 1e-12);
        }
    }
}
