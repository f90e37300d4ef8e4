//! Minimal reverse-mode differentiation core.
//!
//! A [`Graph`] records operations on [`Tensor`]s; [`Graph::backward`] walks
//! the record in reverse. Trainable weights live in a [`ParamStore`] and are
//! bound onto a fresh graph for every forward pass.

mod conv;
pub mod gradcheck;
mod graph;
pub mod layers;
mod linalg;
mod loss;
mod norm;
pub mod optim;
mod param;
mod recurrent;
mod shape;
mod tensor;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use graph::{Graph, Var};
pub use layers::Ctx;
pub use norm::RunningStats;
pub use optim::Adam;
pub use param::{Buffer, BufferId, ParamId, ParamStore, Parameter, StoreSnapshot};
pub use tensor::Tensor;

use crate::error::{config_err, Result};

/// Whether batch norm uses batch statistics and dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

impl Graph {
    /// Inverted dropout: in train mode zeroes each element with probability
    /// `p` and scales survivors by `1/(1-p)`; identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(config_err!("dropout rate must lie in [0, 1), got {p}"));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, graph::Op::Dropout { mask }, vec![x]))
    }
}
