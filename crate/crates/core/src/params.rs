//! Named parameter tensors.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Ordered, named collection of parameter tensors.
///
/// Order is insertion order and is part of the checkpoint format and of the
/// optimizer state layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    /// Uniform in `±√(1/fan_in)`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = (1.0 / fan_in as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, bound, rng));
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    /// Replaces every tensor, checking names and shapes match exactly.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Contract("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    /// Places every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound { set: self, vars }
    }

    /// Places every tensor on `g` without gradient tracking.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        Bound { set: self, vars }
    }
}

/// Parameters placed on a graph, addressable by name.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Wraps vars already placed on a graph, in `set` order.
    pub fn from_vars(set: &'a ParamSet, vars: Vec<Var>) -> Self {
        assert_eq!(set.len(), vars.len());
        Bound { set, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self
            .set
            .position(name)
            .unwrap_or_else(|| panic!("model has no parameter named {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
