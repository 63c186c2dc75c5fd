//! Define-by-run reverse-mode differentiation.
//!
//! Every forward pass records onto a fresh [`Tape`]. Nodes are appended in
//! creation order, so node ids are already a topological order and
//! [`Tape::backward`] simply walks them in reverse.
//!
//! Gradient hooks registered on a node transform the node's total incoming
//! gradient, in registration order, before it lands in the node's gradient
//! slot and before it is propagated to the node's inputs.

mod conv;
mod ops;

pub use conv::ConvGeometry;
pub use ops::{sigmoid, NormAxes};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use ops::Op;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Returned by [`Tape::register_hook`]; pass to [`Tape::remove_hook`] to
/// unregister before backward runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HookHandle {
    node: usize,
    serial: u64,
}

/// Gradient transform. Must return a tensor of the same shape as its input.
pub type GradHook<T> = Box<dyn Fn(&Tensor<T>) -> Tensor<T>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    hooks: Vec<(u64, GradHook<T>)>,
    grad: Option<Tensor<T>>,
}

pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    next_serial: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            next_serial: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node, hook and gradient so the tape can record again.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient after [`Tape::backward`]; `None` for nodes that
    /// do not require grad or that the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn register_hook<F>(&mut self, v: Var, transform: F) -> Result<HookHandle>
    where
        F: Fn(&Tensor<T>) -> Tensor<T> + 'static,
    {
        if self.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        let node = self
            .nodes
            .get_mut(v.0)
            .ok_or_else(|| Error::Usage(format!("unknown node {}", v.0)))?;
        let serial = self.next_serial;
        self.next_serial += 1;
        node.hooks.push((serial, Box::new(transform)));
        Ok(HookHandle { node: v.0, serial })
    }

    /// Returns `true` if the hook was still registered.
    pub fn remove_hook(&mut self, handle: HookHandle) -> bool {
        let Some(node) = self.nodes.get_mut(handle.node) else {
            return false;
        };
        let before = node.hooks.len();
        node.hooks.retain(|(serial, _)| *serial != handle.serial);
        node.hooks.len() != before
    }

    pub fn hook_count(&self, v: Var) -> usize {
        self.nodes[v.0].hooks.len()
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward called twice on the same tape; reset it first".into(),
            ));
        }
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Usage(format!("unknown node {}", loss.0)))?;
        if loss_node.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        self.consumed = true;
        if !loss_node.requires_grad {
            return Ok(());
        }

        let mut pending: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::full(loss_node.value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(mut g) = pending[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (_, hook) in &node.hooks {
                let transformed = hook(&g);
                if transformed.shape() != g.shape() {
                    return Err(Error::dim("grad hook", g.shape(), transformed.shape()));
                }
                g = transformed;
            }
            for (input, contribution) in self.local_grads(id, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut pending[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a = *a + *c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            hooks: Vec::new(),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("unknown node {}", v.0)));
        }
        if self.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        Ok(())
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }
}
