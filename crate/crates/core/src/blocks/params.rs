use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Tensor};

/// Named learnable tensors in deterministic registration order.
///
/// Paths look like `"enc2.scm.conv0.weight"`. A store holds either plain
/// tensors (for inference and optimizer updates) or the tracked handles
/// returned by [`ParamStore::track`] for one training pass.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("parameter {name} registered twice")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        slot.shape().expect_eq(&value.shape())?;
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a gradient-tracked leaf of `graph`.
    pub fn track(&self, graph: &Graph) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v)))
                .collect(),
        }
    }

    /// Gradients of a tracked store, in registration order.
    pub fn gradients(&self, grads: &Gradients) -> Result<IndexMap<String, Vec<f64>>> {
        self.params
            .iter()
            .map(|(k, v)| {
                let g = grads
                    .data(v)
                    .ok_or_else(|| Error::contract(format!("parameter {k} is not tracked")))?;
                Ok((k.clone(), g.to_vec()))
            })
            .collect()
    }

    /// Bitwise equality of names, order, shapes and values.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
