use std::collections::HashMap;

use crate::error::Result;
use crate::graph::Graph;
use crate::network::HatNetwork;
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum: `v ← μ v + g`, `p ← p − lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// Forgets all momentum; called at the start of every task.
    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Updates every network tensor that received a gradient in `g`.
    pub fn step(&mut self, net: &mut HatNetwork, g: &Graph) -> Result<()> {
        for (key, param) in net.state_mut() {
            let Some(grad) = g.grad_of(&key) else {
                continue;
            };
            let v = match self.velocity.get_mut(&key) {
                Some(v) => {
                    for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                        *vi = self.momentum * *vi + gi;
                    }
                    v
                }
                None => self.velocity.entry(key).or_insert_with(|| grad.clone()),
            };
            for (p, vi) in param.data_mut().iter_mut().zip(v.data()) {
                *p -= self.lr * vi;
            }
        }
        Ok(())
    }
}
