use rand::Rng;

use super::{input_side_mask, install_nullifiers, HatMasker};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::payload::HatPayload;
use crate::tensor::Tensor;

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
pub(crate) fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Fully connected layer `y = x Wᵀ + b` with a HAT mask on its outputs.
#[derive(Clone, Debug)]
pub struct HatLinear {
    tag: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub masker: HatMasker,
}

impl HatLinear {
    pub fn new(
        tag: impl Into<String>,
        in_features: usize,
        out_features: usize,
        task_count: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let tag = tag.into();
        HatLinear {
            weight: uniform_init(&[out_features, in_features], in_features, rng),
            bias: uniform_init(&[out_features], in_features, rng),
            masker: HatMasker::new(tag.clone(), out_features, task_count),
            tag,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.tag)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.tag)
    }

    pub fn forward(&self, g: &mut Graph, mut p: HatPayload) -> Result<HatPayload> {
        let x = p.masked_data(g)?;
        let shape = g.tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.in_features() {
            return Err(Error::dim("hat_linear", &shape, self.weight.shape()));
        }
        let training = p.is_training();
        let w = g.bind(&self.weight_key(), &self.weight, training);
        let b = g.bind(&self.bias_key(), &self.bias, training);
        let wt = g.tape.permute(w, &[1, 0])?;
        let xw = g.tape.matmul(x, wt)?;
        let y = g.tape.add(xw, b)?;

        if training && !p.task().is_plain() && self.masker.has_history() {
            let in_cum = input_side_mask(p.last_masker(), self.in_features())?;
            let out_cum = self.masker.cumulative().data().to_vec();
            install_nullifiers(g, w, Some(b), out_cum, in_cum)?;
        }
        let pending = self.masker.bind(g, p.task(), training)?;
        p.derive(y, Some(pending))
    }
}
