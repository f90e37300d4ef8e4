use std::collections::HashMap;

use crate::error::{config_err, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::Tensor;

/// A trainable tensor with its Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let n = value.len();
        Self { name, value, grad: None, adam_m: vec![0.0; n], adam_v: vec![0.0; n], step_count: 0 }
    }
}

/// Non-trainable state (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// Values of every parameter and buffer, used for best-epoch restore.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSnapshot {
    params: Vec<Tensor>,
    buffers: Vec<Tensor>,
}

/// Owns all parameters and buffers of one model. Names are unique across
/// both kinds.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
    index: HashMap<String, Slot>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(config_err!("duplicate parameter name `{name}`"));
        }
        self.index.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        let id = self.params.len();
        self.claim(&name, Slot::Param(id))?;
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<BufferId> {
        let name = name.into();
        let id = self.buffers.len();
        self.claim(&name, Slot::Buffer(id))?;
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Mutable access to the value of a parameter or buffer by name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match *self.index.get(name)? {
            Slot::Param(i) => Some(&mut self.params[i].value),
            Slot::Buffer(i) => Some(&mut self.buffers[i].value),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        match *self.index.get(name)? {
            Slot::Param(i) => Some(&self.params[i].value),
            Slot::Buffer(i) => Some(&self.buffers[i].value),
        }
    }

    /// Every parameter and buffer as `(name, tensor)`, parameters first, in
    /// registration order.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .chain(self.buffers.iter().map(|b| (b.name.as_str(), &b.value)))
    }

    /// Records every parameter as a trainable leaf of `graph`; the returned
    /// vector is indexed by [`ParamId`].
    pub fn bind_all(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().enumerate().map(|(i, p)| graph.bind(i, p.value.clone())).collect()
    }

    /// Adds the gradients that reached bound parameters in `graph`.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        for &(i, var) in graph.bindings() {
            let Some(g) = graph.grad(var) else { continue };
            let p = &mut self.params[i];
            match &mut p.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            params: self.params.iter().map(|p| p.value.clone()).collect(),
            buffers: self.buffers.iter().map(|b| b.value.clone()).collect(),
        }
    }

    pub fn restore(&mut self, snap: &StoreSnapshot) {
        for (p, v) in self.params.iter_mut().zip(&snap.params) {
            p.value = v.clone();
        }
        for (b, v) in self.buffers.iter_mut().zip(&snap.buffers) {
            b.value = v.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_across_kinds() {
        let mut s = ParamStore::new();
        s.add_param("a", Tensor::zeros([2])).unwrap();
        assert!(s.add_param("a", Tensor::zeros([2])).is_err());
        assert!(s.add_buffer("a", Tensor::zeros([2])).is_err());
        s.add_buffer("b", Tensor::zeros([1])).unwrap();
        assert_eq!(s.named_tensors().count(), 2);
    }

    #[test]
    fn moments_start_at_zero() {
        let mut s = ParamStore::new();
        let id = s.add_param("w", Tensor::full([3], 2.0)).unwrap();
        let p = s.param(id);
        assert_eq!(p.adam_m, vec![0.0; 3]);
        assert_eq!(p.adam_v, vec![0.0; 3]);
        assert_eq!(p.step_count, 0);
    }
}
