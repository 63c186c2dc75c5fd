//! Sequential HAT networks.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::graph::{Graph, NormStats};
use crate::layers::indexed::SubModule;
use crate::layers::{HatConv2d, HatGate, HatLinear, HatMasker, Linear, Norm, TaskIndexed};
use crate::payload::{HatPayload, MaskScale, TaskId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Layer {
    Gate(HatGate),
    Linear(HatLinear),
    Conv(HatConv2d),
    Relu,
    /// Collapses every axis after the batch axis.
    Flatten,
    Norm(TaskIndexed<Norm>),
    Head(TaskIndexed<Linear>),
}

impl Layer {
    pub fn masker(&self) -> Option<&HatMasker> {
        match self {
            Layer::Gate(l) => Some(&l.masker),
            Layer::Linear(l) => Some(&l.masker),
            Layer::Conv(l) => Some(&l.masker),
            _ => None,
        }
    }

    pub fn masker_mut(&mut self) -> Option<&mut HatMasker> {
        match self {
            Layer::Gate(l) => Some(&mut l.masker),
            Layer::Linear(l) => Some(&mut l.masker),
            Layer::Conv(l) => Some(&mut l.masker),
            _ => None,
        }
    }

    fn forward(&self, g: &mut Graph, p: HatPayload) -> Result<HatPayload> {
        match self {
            Layer::Gate(l) => l.forward(g, p),
            Layer::Linear(l) => l.forward(g, p),
            Layer::Conv(l) => l.forward(g, p),
            Layer::Relu => p.forward_by(g, |g, x| g.tape.relu(x)),
            Layer::Flatten => p.forward_by(g, |g, x| {
                let shape = g.tape.value(x).shape();
                let rest: usize = shape[1..].iter().product();
                let batch = shape[0];
                g.tape.reshape(x, &[batch, rest])
            }),
            Layer::Norm(m) => m.forward(g, p),
            Layer::Head(m) => m.forward(g, p),
        }
    }
}

/// Shape of the multilayer perceptrons used by the experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Put a HAT gate directly on the input features.
    pub input_gate: bool,
}

#[derive(Clone, Debug)]
pub struct HatNetwork {
    layers: Vec<Layer>,
    task_count: usize,
    s_max: f64,
}

impl HatNetwork {
    pub fn new(task_count: usize, s_max: f64) -> Result<Self> {
        if task_count == 0 {
            return Err(Error::Validation("task count must be at least 1".into()));
        }
        if !(s_max > 1.0) {
            return Err(Error::Validation(format!("s_max must exceed 1, got {s_max}")));
        }
        Ok(HatNetwork {
            layers: Vec::new(),
            task_count,
            s_max,
        })
    }

    pub fn push(mut self, layer: Layer) -> Self {
        self.layers.push(layer);
        self
    }

    /// `[gate] -> (HatLinear -> relu)* -> per-task zero-initialized head`.
    pub fn mlp(spec: &MlpSpec, task_count: usize, s_max: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut net = HatNetwork::new(task_count, s_max)?;
        if spec.input_gate {
            net = net.push(Layer::Gate(HatGate::new("gate", spec.inputs, task_count)));
        }
        let mut width = spec.inputs;
        for (i, &h) in spec.hidden.iter().enumerate() {
            net = net
                .push(Layer::Linear(HatLinear::new(format!("fc{i}"), width, h, task_count, rng)))
                .push(Layer::Relu);
            width = h;
        }
        let head = TaskIndexed::new("head", Linear::zeros(width, spec.classes), task_count);
        Ok(net.push(Layer::Head(head)))
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn maskers(&self) -> impl Iterator<Item = &HatMasker> {
        self.layers.iter().filter_map(Layer::masker)
    }

    pub fn maskers_mut(&mut self) -> impl Iterator<Item = &mut HatMasker> {
        self.layers.iter_mut().filter_map(Layer::masker_mut)
    }

    pub fn forward(&self, g: &mut Graph, mut p: HatPayload) -> Result<HatPayload> {
        for layer in &self.layers {
            p = layer.forward(g, p)?;
        }
        Ok(p)
    }

    /// Runs the network on `x` and materializes any trailing mask.
    pub fn logits(
        &self,
        g: &mut Graph,
        x: &Tensor,
        task: TaskId,
        scale: MaskScale,
        training: bool,
    ) -> Result<Var> {
        let input = g.tape.constant(x.clone());
        let p = HatPayload::new(input, task, scale, training);
        let mut out = self.forward(g, p)?;
        out.masked_data(g)
    }

    /// Evaluation-mode logits at `s_max`: no hooks, no state change.
    pub fn predict(&self, x: &Tensor, task: TaskId) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.logits(&mut g, x, task, MaskScale::at_max(self.s_max), false)?;
        Ok(g.tape.value(out).clone())
    }

    /// Every stored tensor (parameters, buffers, mask embeddings and
    /// cumulative masks) under its stable key.
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push((l.weight_key(), &l.weight));
                    out.push((l.bias_key(), &l.bias));
                }
                Layer::Conv(l) => {
                    out.push((l.weight_key(), &l.weight));
                    out.push((l.bias_key(), &l.bias));
                }
                Layer::Norm(m) => push_indexed(&mut out, m),
                Layer::Head(m) => push_indexed(&mut out, m),
                Layer::Gate(_) | Layer::Relu | Layer::Flatten => {}
            }
            if let Some(m) = layer.masker() {
                for (t, e) in m.embeddings().iter().enumerate() {
                    out.push((m.embedding_key(t), e));
                }
            }
        }
        out
    }

    /// Mutable view of the trainable and buffer tensors. Cumulative masks
    /// are not included; they only change through finalization.
    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    let (wk, bk) = (l.weight_key(), l.bias_key());
                    out.push((wk, &mut l.weight));
                    out.push((bk, &mut l.bias));
                    push_embeddings(&mut out, &mut l.masker);
                }
                Layer::Conv(l) => {
                    let (wk, bk) = (l.weight_key(), l.bias_key());
                    out.push((wk, &mut l.weight));
                    out.push((bk, &mut l.bias));
                    push_embeddings(&mut out, &mut l.masker);
                }
                Layer::Gate(l) => push_embeddings(&mut out, &mut l.masker),
                Layer::Norm(m) => push_indexed_mut(&mut out, m),
                Layer::Head(m) => push_indexed_mut(&mut out, m),
                Layer::Relu | Layer::Flatten => {}
            }
        }
        out
    }

    pub fn apply_norm_stats(&mut self, stats: &[NormStats]) {
        for s in stats {
            for layer in &mut self.layers {
                if let Layer::Norm(m) = layer {
                    let count = m.task_count();
                    for t in 0..count {
                        if m.prefix(t) == s.key {
                            m.modules_mut()[t].apply_stats(s);
                        }
                    }
                }
            }
        }
    }

    /// Number of weight and bias entries in HAT-masked layers.
    pub fn hat_parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear(l) => l.weight.numel() + l.bias.numel(),
                Layer::Conv(l) => l.weight.numel() + l.bias.numel(),
                _ => 0,
            })
            .sum()
    }
}

fn push_indexed<'a, M: SubModule>(out: &mut Vec<(String, &'a Tensor)>, m: &'a TaskIndexed<M>) {
    for (t, sub) in m.modules().iter().enumerate() {
        let prefix = m.prefix(t);
        for (name, tensor) in sub.state() {
            out.push((format!("{prefix}.{name}"), tensor));
        }
    }
}

fn push_indexed_mut<'a, M: SubModule>(
    out: &mut Vec<(String, &'a mut Tensor)>,
    m: &'a mut TaskIndexed<M>,
) {
    let prefixes: Vec<String> = (0..m.task_count()).map(|t| m.prefix(t)).collect();
    for (sub, prefix) in m.modules_mut().iter_mut().zip(prefixes) {
        for (name, tensor) in sub.state_mut() {
            out.push((format!("{prefix}.{name}"), tensor));
        }
    }
}

fn push_embeddings<'a>(out: &mut Vec<(String, &'a mut Tensor)>, m: &'a mut HatMasker) {
    let keys: Vec<String> = (0..m.task_count()).map(|t| m.embedding_key(t)).collect();
    for (e, key) in m.embeddings_mut().iter_mut().zip(keys) {
        out.push((key, e));
    }
}
