//! Modules that keep one fully independent copy per task.

use rand::Rng;

use super::linear::uniform_init;
use crate::autograd::{NormAxes, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormStats};
use crate::payload::HatPayload;
use crate::tensor::Tensor;

/// A module that can live inside [`TaskIndexed`].
pub trait SubModule: Clone {
    fn forward(&self, g: &mut Graph, prefix: &str, x: Var, training: bool) -> Result<Var>;

    /// Every tensor of state, trainable or not, under a stable local name.
    fn state(&self) -> Vec<(&'static str, &Tensor)>;

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    /// Folds running statistics observed during training into the module.
    fn apply_stats(&mut self, _stats: &NormStats) {}
}

/// Dispatches a payload to the submodule of its task.
#[derive(Clone, Debug)]
pub struct TaskIndexed<M> {
    tag: String,
    modules: Vec<M>,
    initial: M,
}

impl<M: SubModule> TaskIndexed<M> {
    /// Every task starts from a copy of `proto`.
    pub fn new(tag: impl Into<String>, proto: M, task_count: usize) -> Self {
        TaskIndexed {
            tag: tag.into(),
            modules: vec![proto.clone(); task_count],
            initial: proto,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn task_count(&self) -> usize {
        self.modules.len()
    }

    pub fn module(&self, task: usize) -> Result<&M> {
        self.modules.get(task).ok_or(Error::TaskRange {
            task,
            count: self.modules.len(),
        })
    }

    pub fn module_mut(&mut self, task: usize) -> Result<&mut M> {
        let count = self.modules.len();
        self.modules
            .get_mut(task)
            .ok_or(Error::TaskRange { task, count })
    }

    pub fn modules(&self) -> &[M] {
        &self.modules
    }

    pub(crate) fn modules_mut(&mut self) -> &mut [M] {
        &mut self.modules
    }

    pub fn prefix(&self, task: usize) -> String {
        format!("{}.{task}", self.tag)
    }

    /// Restores submodule `task` to its initial state.
    pub fn reset(&mut self, task: usize) -> Result<()> {
        let fresh = self.initial.clone();
        *self.module_mut(task)? = fresh;
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, mut p: HatPayload) -> Result<HatPayload> {
        let task = p
            .task()
            .get()
            .ok_or_else(|| Error::Usage(format!("{} needs a task id", self.tag)))?;
        let module = self.module(task)?;
        let x = p.masked_data(g)?;
        let y = module.forward(g, &self.prefix(task), x, p.is_training())?;
        p.derive(y, None)
    }
}

/// Plain fully connected layer, used as a per-task output head.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: uniform_init(&[out_features, in_features], in_features, rng),
            bias: uniform_init(&[out_features], in_features, rng),
        }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }
}

impl SubModule for Linear {
    fn forward(&self, g: &mut Graph, prefix: &str, x: Var, training: bool) -> Result<Var> {
        let w = g.bind(&format!("{prefix}.weight"), &self.weight, training);
        let b = g.bind(&format!("{prefix}.bias"), &self.bias, training);
        let wt = g.tape.permute(w, &[1, 0])?;
        let xw = g.tape.matmul(x, wt)?;
        g.tape.add(xw, b)
    }

    fn state(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Per-channel statistics over the batch; running averages at eval.
    Batch,
    /// Per-sample statistics over all features.
    Layer,
}

/// Normalization with a per-channel (axis 1) affine transform.
#[derive(Clone, Debug)]
pub struct Norm {
    pub kind: NormKind,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl Norm {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        Norm {
            kind,
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let shape = x.shape();
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for (i, &v) in x.data().iter().enumerate() {
            let c = (i / inner) % channels;
            sum[c] += v;
            sq[c] += v * v;
        }
        let n = (x.numel() / channels) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let biased = (s / n - m * m).max(0.0);
                if n > 1.0 {
                    biased * n / (n - 1.0)
                } else {
                    biased
                }
            })
            .collect();
        (mean, var)
    }
}

impl SubModule for Norm {
    fn forward(&self, g: &mut Graph, prefix: &str, x: Var, training: bool) -> Result<Var> {
        let shape = g.tape.value(x).shape().to_vec();
        if shape.len() < 2 || shape[1] != self.gamma.numel() {
            return Err(Error::dim("norm", &shape, self.gamma.shape()));
        }
        let normalized = match (self.kind, training) {
            (NormKind::Layer, _) => g.tape.normalize(x, NormAxes::PerSample, self.eps)?,
            (NormKind::Batch, true) => {
                let (mean, var) = Self::channel_stats(g.tape.value(x));
                g.record_norm_stats(NormStats {
                    key: prefix.to_owned(),
                    mean,
                    var,
                });
                g.tape.normalize(x, NormAxes::PerChannel, self.eps)?
            }
            (NormKind::Batch, false) => {
                let neg_mean = g.tape.constant(self.running_mean.map(|m| -m));
                let inv_std = g
                    .tape
                    .constant(self.running_var.map(|v| 1.0 / (v + self.eps).sqrt()));
                let centered = g.tape.add(x, neg_mean)?;
                g.tape.mul(centered, inv_std)?
            }
        };
        let gamma = g.bind(&format!("{prefix}.gamma"), &self.gamma, training);
        let beta = g.bind(&format!("{prefix}.beta"), &self.beta, training);
        let scaled = g.tape.mul(normalized, gamma)?;
        g.tape.add(scaled, beta)
    }

    fn state(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    fn apply_stats(&mut self, stats: &NormStats) {
        if self.kind != NormKind::Batch {
            return;
        }
        let m = self.momentum;
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * v;
        }
    }
}
