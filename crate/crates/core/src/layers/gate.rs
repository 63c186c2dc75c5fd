use super::HatMasker;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::payload::HatPayload;

/// A HAT mask with an identity base module: gates its input features
/// directly. Has no weights, so nothing to nullify.
#[derive(Clone, Debug)]
pub struct HatGate {
    pub masker: HatMasker,
}

impl HatGate {
    pub fn new(tag: impl Into<String>, features: usize, task_count: usize) -> Self {
        HatGate {
            masker: HatMasker::new(tag, features, task_count),
        }
    }

    pub fn tag(&self) -> &str {
        self.masker.tag()
    }

    pub fn forward(&self, g: &mut Graph, mut p: HatPayload) -> Result<HatPayload> {
        let x = p.masked_data(g)?;
        let shape = g.tape.value(x).shape();
        if shape.len() < 2 || shape[1] != self.masker.features() {
            return Err(Error::dim("hat_gate", shape, &[self.masker.features()]));
        }
        let pending = self.masker.bind(g, p.task(), p.is_training())?;
        p.derive(x, Some(pending))
    }
}
