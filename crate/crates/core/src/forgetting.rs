//! Selective forgetting: zero the parameters that only one task uses.
//!
//! Exclusivity is decided per unit from the stored binary masks and lifted
//! to weights conservatively: a weight is erased only when both its output
//! unit and its input unit (at the preceding masker) belong to the task
//! alone. A layer with no preceding masker treats every input as exclusive.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::indexed::SubModule;
use crate::layers::{attention, HatMasker, TaskIndexed, THETA_BIN};
use crate::network::{HatNetwork, Layer};
use crate::tensor::Tensor;
use crate::training::{init_embedding_row, EmbeddingInit};

/// Binarization threshold for "this task uses this unit".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributionThreshold(f64);

impl AttributionThreshold {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Validation(format!("threshold must be in (0, 1), got {theta}")));
        }
        Ok(AttributionThreshold(theta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for AttributionThreshold {
    fn default() -> Self {
        AttributionThreshold(THETA_BIN)
    }
}

/// Units of `masker` used by `task` and by no other finalized task.
pub fn attribution(masker: &HatMasker, task: usize, theta: AttributionThreshold, s_max: f64) -> Result<Vec<bool>> {
    if !masker.is_finalized(task) {
        return Err(Error::State(format!("task {task} is not finalized at {}", masker.tag())));
    }
    let usage = |t: usize| -> Result<Vec<bool>> {
        if theta.value() == THETA_BIN {
            Ok(masker.stored_mask(t).expect("finalized").to_vec())
        } else {
            Ok(attention(masker.embedding(t)?, s_max)
                .data()
                .iter()
                .map(|&a| a > theta.value())
                .collect())
        }
    };
    let mut exclusive = usage(task)?;
    for other in masker.finalized_tasks().filter(|&t| t != task) {
        for (x, used) in exclusive.iter_mut().zip(usage(other)?) {
            *x &= !used;
        }
    }
    Ok(exclusive)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerForget {
    pub tag: String,
    pub weights: usize,
    pub biases: usize,
}

/// Entries zeroed by [`forget_task`], per weighted layer and per reset
/// task-indexed submodule, in network order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForgetReport {
    pub layers: Vec<LayerForget>,
}

impl ForgetReport {
    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.weights + l.biases).sum()
    }
}

impl fmt::Display for ForgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            writeln!(f, "{}.weights={}", l.tag, l.weights)?;
            writeln!(f, "{}.biases={}", l.tag, l.biases)?;
        }
        writeln!(f, "total={}", self.total())
    }
}

/// Erases `task` from `net`: zeroes its exclusive weights and biases, resets
/// its task-indexed submodules (their parameters belong to `task` alone) and mask embeddings (to `init`), and rebuilds
/// every cumulative mask from the remaining tasks.
pub fn forget_task(
    net: &mut HatNetwork,
    task: usize,
    theta: AttributionThreshold,
    init: EmbeddingInit,
    rng: &mut impl Rng,
) -> Result<ForgetReport> {
    let s_max = net.s_max();
    if net.maskers().next().is_none() || !net.maskers().all(|m| m.is_finalized(task)) {
        return Err(Error::State(format!("task {task} is not finalized")));
    }
    let mut report = ForgetReport::default();
    let mut prev: Option<Vec<bool>> = None;
    for layer in net.layers_mut() {
        match layer {
            Layer::Gate(l) => prev = Some(attribution(&l.masker, task, theta, s_max)?),
            Layer::Linear(l) => {
                let out = attribution(&l.masker, task, theta, s_max)?;
                let inputs = expand(prev.as_deref(), l.in_features())?;
                report.layers.push(LayerForget {
                    tag: l.tag().to_owned(),
                    weights: zero_weights(&mut l.weight, &out, &inputs),
                    biases: zero_biases(&mut l.bias, &out),
                });
                prev = Some(out);
            }
            Layer::Conv(l) => {
                let out = attribution(&l.masker, task, theta, s_max)?;
                let inputs = expand(prev.as_deref(), l.in_channels())?;
                report.layers.push(LayerForget {
                    tag: l.tag().to_owned(),
                    weights: zero_weights(&mut l.weight, &out, &inputs),
                    biases: zero_biases(&mut l.bias, &out),
                });
                prev = Some(out);
            }
            Layer::Norm(m) => report.layers.push(reset_indexed(m, task)?),
            Layer::Head(m) => report.layers.push(reset_indexed(m, task)?),
            Layer::Relu | Layer::Flatten => {}
        }
    }
    for m in net.maskers_mut() {
        init_embedding_row(m, task, init, rng)?;
        m.unfinalize(task, s_max)?;
    }
    Ok(report)
}

/// Resets the task's own submodule, counting entries that became zero.
/// Bias-like tensors (`bias`, `beta`) count as biases, the rest as weights.
fn reset_indexed<M: SubModule>(m: &mut TaskIndexed<M>, task: usize) -> Result<LayerForget> {
    let before: Vec<(&'static str, Tensor)> = m
        .module(task)?
        .state()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    m.reset(task)?;
    let mut counts = LayerForget {
        tag: m.prefix(task),
        weights: 0,
        biases: 0,
    };
    for ((name, old), (_, new)) in before.iter().zip(m.module(task)?.state()) {
        let zeroed = old
            .data()
            .iter()
            .zip(new.data())
            .filter(|(&o, &n)| o != 0.0 && n == 0.0)
            .count();
        match *name {
            "bias" | "beta" => counts.biases += zeroed,
            _ => counts.weights += zeroed,
        }
    }
    Ok(counts)
}

/// Input-side exclusivity for a layer with `n` inputs; repeats each unit over
/// its block when a feature map was flattened.
fn expand(prev: Option<&[bool]>, n: usize) -> Result<Vec<bool>> {
    let Some(prev) = prev else {
        return Ok(vec![true; n]);
    };
    if prev.is_empty() || !n.is_multiple_of(prev.len()) {
        return Err(Error::dim("forget", &[prev.len()], &[n]));
    }
    let block = n / prev.len();
    Ok(prev.iter().flat_map(|&e| std::iter::repeat_n(e, block)).collect())
}

fn zero_weights(w: &mut Tensor, out: &[bool], inputs: &[bool]) -> usize {
    let n_in = w.shape()[1];
    let taps: usize = w.shape()[2..].iter().product();
    let mut zeroed = 0;
    for (idx, v) in w.data_mut().iter_mut().enumerate() {
        let i = idx / (n_in * taps);
        let j = (idx / taps) % n_in;
        if out[i] && inputs[j] && *v != 0.0 {
            *v = 0.0;
            zeroed += 1;
        }
    }
    zeroed
}

fn zero_biases(b: &mut Tensor, out: &[bool]) -> usize {
    let mut zeroed = 0;
    for (v, &ex) in b.data_mut().iter_mut().zip(out) {
        if ex && *v != 0.0 {
            *v = 0.0;
            zeroed += 1;
        }
    }
    zeroed
}
