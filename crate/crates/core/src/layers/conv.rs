use rand::Rng;

use super::linear::uniform_init;
use super::{input_side_mask, install_nullifiers, HatMasker};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::payload::HatPayload;
use crate::tensor::Tensor;

/// 2-D convolution with a HAT mask over its output channels.
#[derive(Clone, Debug)]
pub struct HatConv2d {
    tag: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub masker: HatMasker,
}

impl HatConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tag: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        task_count: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let tag = tag.into();
        let fan_in = in_channels * kernel * kernel;
        HatConv2d {
            weight: uniform_init(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: uniform_init(&[out_channels], fan_in, rng),
            stride,
            padding,
            masker: HatMasker::new(tag.clone(), out_channels, task_count),
            tag,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.tag)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.tag)
    }

    pub fn forward(&self, g: &mut Graph, mut p: HatPayload) -> Result<HatPayload> {
        let x = p.masked_data(g)?;
        let shape = g.tape.value(x).shape();
        if shape.len() != 4 || shape[1] != self.in_channels() {
            return Err(Error::dim("hat_conv2d", shape, self.weight.shape()));
        }
        let training = p.is_training();
        let w = g.bind(&self.weight_key(), &self.weight, training);
        let b = g.bind(&self.bias_key(), &self.bias, training);
        let y = g.tape.conv2d(x, w, Some(b), self.stride, self.padding)?;

        if training && !p.task().is_plain() && self.masker.has_history() {
            let in_cum = input_side_mask(p.last_masker(), self.in_channels())?;
            let out_cum = self.masker.cumulative().data().to_vec();
            install_nullifiers(g, w, Some(b), out_cum, in_cum)?;
        }
        let pending = self.masker.bind(g, p.task(), training)?;
        p.derive(y, Some(pending))
    }
}
