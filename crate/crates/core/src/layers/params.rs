use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};

/// Ordered registry of named parameter tensors.
///
/// Tensors are reference-counted so a graph can borrow them for a forward
/// pass without copying; in-place updates copy only if a graph still holds
/// a reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Arc<Tensor>)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!(
                "duplicate parameter name \"{name}\""
            )));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, Arc::new(value)));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &*self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(Arc::make_mut(&mut self.entries[i].1))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), &**t))
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[i].1)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Sum of scalar counts over parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Adds every tensor to `g` as a trainable leaf.
    pub fn register(&self, g: &mut Graph) -> ParamNodes {
        let ids: Vec<NodeId> = self
            .entries
            .iter()
            .map(|(_, t)| g.param(Arc::clone(t)))
            .collect();
        self.bind(ids)
    }

    /// Associates already-created graph leaves with the store's names, in
    /// store order.
    pub fn bind(&self, ids: Vec<NodeId>) -> ParamNodes {
        let by_name = self
            .entries
            .iter()
            .zip(&ids)
            .map(|((n, _), &id)| (n.clone(), id))
            .collect();
        ParamNodes {
            by_name,
            order: ids,
        }
    }

    /// Shared handles to every tensor, in store order.
    pub fn tensors_arc(&self) -> Vec<Arc<Tensor>> {
        self.entries.iter().map(|(_, t)| Arc::clone(t)).collect()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| (**t).clone()).collect()
    }
}

/// Graph leaves for a [`ParamStore`], addressable by name.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    by_name: HashMap<String, NodeId>,
    order: Vec<NodeId>,
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter \"{name}\"")))
    }

    /// Leaves in store order.
    pub fn ids(&self) -> &[NodeId] {
        &self.order
    }
}

/// Uniform Glorot bound √(6/(fan_in+fan_out)).
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_in × fan_out]` matrix drawn from uniform ±[`glorot_bound`].
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(&[fan_in, fan_out], glorot_bound(fan_in, fan_out), rng)
}
