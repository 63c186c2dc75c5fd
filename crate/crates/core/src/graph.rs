use std::collections::{HashMap, HashSet};

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Running statistics observed by a batch-norm submodule during one
/// training forward pass; applied to the module after the step.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub key: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One forward/backward pass: a fresh tape plus the mapping from parameter
/// keys to the leaves they were bound to.
#[derive(Default)]
pub struct Graph {
    pub tape: Tape,
    bindings: HashMap<String, Var>,
    compensated: HashSet<Var>,
    norm_stats: Vec<NormStats>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds a parameter to a leaf. Binding the same key twice in one pass
    /// returns the first leaf so shared parameters accumulate one gradient.
    pub fn bind(&mut self, key: &str, value: &Tensor, requires_grad: bool) -> Var {
        if let Some(&v) = self.bindings.get(key) {
            return v;
        }
        let v = self.tape.leaf(value.clone(), requires_grad);
        self.bindings.insert(key.to_owned(), v);
        v
    }

    pub fn var_of(&self, key: &str) -> Option<Var> {
        self.bindings.get(key).copied()
    }

    pub fn grad_of(&self, key: &str) -> Option<&Tensor> {
        self.var_of(key).and_then(|v| self.tape.grad(v))
    }

    pub fn bound_keys(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(String::as_str)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Marks an embedding leaf as carrying the compensation hook; returns
    /// `false` if it already did.
    pub(crate) fn mark_compensated(&mut self, v: Var) -> bool {
        self.compensated.insert(v)
    }

    pub(crate) fn record_norm_stats(&mut self, stats: NormStats) {
        self.norm_stats.push(stats);
    }

    pub fn norm_stats(&self) -> &[NormStats] {
        &self.norm_stats
    }
}
