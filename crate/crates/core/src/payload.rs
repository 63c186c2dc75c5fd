//! The value that flows between HAT modules.
//!
//! A [`HatPayload`] carries the *unmasked* output of the last module together
//! with the task id, the mask scale and at most one pending masker. The mask
//! is applied only when [`HatPayload::masked_data`] is called, at which point
//! the masker moves onto the payload's mask chain. The chain is the record of
//! which masks the data went through, in order; weighted layers read the last
//! entry to find the mask on their input side.

use std::rc::Rc;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::hooks::compensate_and_clip;

/// Task index, or absent for plain (unmasked) mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TaskId(Option<usize>);

impl TaskId {
    pub fn new(task: usize) -> Self {
        TaskId(Some(task))
    }

    pub fn plain() -> Self {
        TaskId(None)
    }

    pub fn get(self) -> Option<usize> {
        self.0
    }

    pub fn is_plain(self) -> bool {
        self.0.is_none()
    }
}

impl From<usize> for TaskId {
    fn from(t: usize) -> Self {
        TaskId::new(t)
    }
}

/// Mask scale `s`. An absent value means `s_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskScale {
    value: Option<f64>,
    s_max: f64,
}

impl MaskScale {
    pub fn new(s: f64, s_max: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) || !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::Validation(format!(
                "mask scale must be positive and finite (s={s}, s_max={s_max})"
            )));
        }
        Ok(MaskScale {
            value: Some(s),
            s_max,
        })
    }

    pub fn at_max(s_max: f64) -> Self {
        MaskScale { value: None, s_max }
    }

    pub fn value(&self) -> f64 {
        self.value.unwrap_or(self.s_max)
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }
}

/// Snapshot of a masker as seen by one forward pass.
#[derive(Clone, Debug)]
pub struct MaskerRef {
    pub(crate) tag: Rc<str>,
    pub(crate) features: usize,
    /// Embedding leaf for the payload's task; `None` in plain mode.
    pub(crate) embedding: Option<Var>,
    pub(crate) cumulative: Rc<Vec<f64>>,
}

impl MaskerRef {
    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Elementwise max of all finalized tasks' masks at this masker.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

#[derive(Clone, Debug)]
pub struct HatPayload {
    data: Var,
    task: TaskId,
    scale: MaskScale,
    pending: Option<MaskerRef>,
    chain: Vec<MaskerRef>,
    training: bool,
}

impl HatPayload {
    pub fn new(data: Var, task: TaskId, scale: MaskScale, training: bool) -> Self {
        HatPayload {
            data,
            task,
            scale,
            pending: None,
            chain: Vec::new(),
            training,
        }
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn scale(&self) -> MaskScale {
        self.scale
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn pending(&self) -> Option<&MaskerRef> {
        self.pending.as_ref()
    }

    pub fn mask_chain(&self) -> &[MaskerRef] {
        &self.chain
    }

    /// The most recently traversed masker, i.e. the input-side mask of the
    /// next weighted layer.
    pub fn last_masker(&self) -> Option<&MaskerRef> {
        self.chain.last()
    }

    /// The stored tensor without applying any pending mask.
    pub fn unmasked(&self) -> Var {
        self.data
    }

    /// Wraps `data` as the output of a module with `masker` pending, keeping
    /// this payload's task, scale, mode and chain.
    pub fn derive(&self, data: Var, masker: Option<MaskerRef>) -> Result<Self> {
        if self.pending.is_some() {
            return Err(Error::Usage(
                "derive from a payload whose mask is still pending".into(),
            ));
        }
        Ok(HatPayload {
            data,
            task: self.task,
            scale: self.scale,
            pending: masker,
            chain: self.chain.clone(),
            training: self.training,
        })
    }

    /// Applies the pending mask (if any) and returns the masked tensor.
    ///
    /// In training mode the first materialization of a task embedding also
    /// registers the embedding-gradient compensation hook on it.
    pub fn masked_data(&mut self, g: &mut Graph) -> Result<Var> {
        let Some(masker) = self.pending.take() else {
            return Ok(self.data);
        };
        let Some(e) = masker.embedding else {
            self.chain.push(masker);
            return Ok(self.data);
        };
        let shape = g.tape.value(self.data).shape().to_vec();
        let axis = if shape.len() >= 2 { shape[1] } else { shape[0] };
        if axis != masker.features {
            let err = Error::dim("masked_data", &shape, &[masker.features]);
            self.pending = Some(masker);
            return Err(err);
        }
        let s = self.scale.value();
        let se = g.tape.scale(e, s)?;
        let a = g.tape.sigmoid(se)?;
        if self.training && g.tape.requires_grad(e) && g.mark_compensated(e) {
            let values = g.tape.value(e).clone();
            let s_max = self.scale.s_max();
            g.tape
                .register_hook(e, move |q| compensate_and_clip(q, &values, s, s_max))?;
        }
        self.data = g.tape.mul(self.data, a)?;
        self.chain.push(masker);
        Ok(self.data)
    }

    /// Runs a payload-unaware operation on the masked data.
    pub fn forward_by<F>(mut self, g: &mut Graph, op: F) -> Result<Self>
    where
        F: FnOnce(&mut Graph, Var) -> Result<Var>,
    {
        let x = self.masked_data(g)?;
        self.data = op(g, x)?;
        Ok(self)
    }

    pub fn reshape(self, g: &mut Graph, shape: &[usize]) -> Result<Self> {
        self.forward_by(g, |g, x| g.tape.reshape(x, shape))
    }

    pub fn permute(self, g: &mut Graph, perm: &[usize]) -> Result<Self> {
        self.forward_by(g, |g, x| g.tape.permute(x, perm))
    }

    pub fn add(self, g: &mut Graph, other: HatPayload) -> Result<Self> {
        self.combine(g, other, |g, a, b| g.tape.add(a, b))
    }

    pub fn matmul(self, g: &mut Graph, other: HatPayload) -> Result<Self> {
        self.combine(g, other, |g, a, b| g.tape.matmul(a, b))
    }

    fn combine<F>(mut self, g: &mut Graph, mut other: HatPayload, op: F) -> Result<Self>
    where
        F: FnOnce(&mut Graph, Var, Var) -> Result<Var>,
    {
        if self.task != other.task || self.scale != other.scale {
            return Err(Error::Usage(format!(
                "payload operands disagree: task {:?}/{:?}, scale {}/{}",
                self.task.get(),
                other.task.get(),
                self.scale.value(),
                other.scale.value()
            )));
        }
        let a = self.masked_data(g)?;
        let b = other.masked_data(g)?;
        self.data = op(g, a, b)?;
        self.chain.extend(other.chain);
        self.training |= other.training;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn masker(g: &mut Graph, tag: &str, e: Vec<f64>, grad: bool) -> MaskerRef {
        let features = e.len();
        let v = g.bind(&format!("{tag}.e"), &Tensor::vector(e), grad);
        MaskerRef {
            tag: tag.into(),
            features,
            embedding: Some(v),
            cumulative: Rc::new(vec![0.0; features]),
        }
    }

    fn payload(g: &mut Graph, data: Tensor, task: TaskId) -> HatPayload {
        let x = g.tape.constant(data);
        HatPayload::new(x, task, MaskScale::at_max(400.0), false)
    }

    #[test]
    fn no_pending_mask_returns_data() {
        let mut g = Graph::new();
        let mut p = payload(&mut g, Tensor::vector(vec![1.0, -2.0]), TaskId::new(0));
        let x = p.unmasked();
        assert_eq!(p.masked_data(&mut g).unwrap(), x);
        assert!(p.mask_chain().is_empty());
    }

    #[test]
    fn plain_mode_is_identity_but_records_chain() {
        let mut g = Graph::new();
        let p = payload(&mut g, Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap(), TaskId::plain());
        let mut m = masker(&mut g, "m", vec![0.0, 0.0], false);
        m.embedding = None;
        let mut p = p.derive(p.unmasked(), Some(m)).unwrap();
        let out = p.masked_data(&mut g).unwrap();
        assert_eq!(g.tape.value(out).data(), &[3.0, 4.0]);
        assert_eq!(p.mask_chain().len(), 1);
        assert!(p.pending().is_none());
    }

    #[test]
    fn zero_embedding_halves_data() {
        let mut g = Graph::new();
        let p = payload(&mut g, Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), TaskId::new(0));
        let m = masker(&mut g, "m", vec![0.0, 0.0], false);
        let mut p = p.derive(p.unmasked(), Some(m)).unwrap();
        let out = p.masked_data(&mut g).unwrap();
        assert_eq!(g.tape.value(out).data(), &[0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn saturated_embedding_passes_data() {
        let mut g = Graph::new();
        let data = vec![1.5, -2.0, 0.25];
        let p = payload(&mut g, Tensor::matrix(1, 3, data.clone()).unwrap(), TaskId::new(0));
        let m = masker(&mut g, "m", vec![1.0; 3], false);
        let mut p = p.derive(p.unmasked(), Some(m)).unwrap();
        let out = p.masked_data(&mut g).unwrap();
        for (o, d) in g.tape.value(out).data().iter().zip(&data) {
            assert!((o - d).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_length_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let p = payload(&mut g, Tensor::matrix(1, 3, vec![1.0; 3]).unwrap(), TaskId::new(0));
        let m = masker(&mut g, "m", vec![1.0; 2], false);
        let mut p = p.derive(p.unmasked(), Some(m)).unwrap();
        assert!(matches!(p.masked_data(&mut g), Err(Error::Dimension { .. })));
        assert!(p.pending().is_some());
    }

    #[test]
    fn chain_follows_traversal_order() {
        let mut g = Graph::new();
        let mut p = payload(&mut g, Tensor::matrix(1, 2, vec![1.0; 2]).unwrap(), TaskId::new(0));
        for tag in ["m1", "m2"] {
            let x = p.masked_data(&mut g).unwrap();
            let m = masker(&mut g, tag, vec![0.3, -0.3], false);
            p = p.derive(x, Some(m)).unwrap();
        }
        p.masked_data(&mut g).unwrap();
        let tags: Vec<&str> = p.mask_chain().iter().map(MaskerRef::tag).collect();
        assert_eq!(tags, ["m1", "m2"]);
    }

    #[test]
    fn forward_by_relu_and_scaling() {
        let mut g = Graph::new();
        let p = payload(&mut g, Tensor::vector(vec![-1.0, 2.0]), TaskId::new(0));
        let p = p.forward_by(&mut g, |g, x| g.tape.relu(x)).unwrap();
        assert_eq!(g.tape.value(p.unmasked()).data(), &[0.0, 2.0]);

        let data = vec![1.0, -3.0];
        let p = payload(&mut g, Tensor::vector(data.clone()), TaskId::new(0));
        let m = masker(&mut g, "half", vec![0.0, 0.0], false);
        let p = p.derive(p.unmasked(), Some(m)).unwrap();
        let p = p.forward_by(&mut g, |g, x| g.tape.scale(x, 2.0)).unwrap();
        assert!(p.pending().is_none());
        assert_eq!(p.mask_chain().len(), 1);
        assert_eq!(g.tape.value(p.unmasked()).data(), &data[..]);
    }

    #[test]
    fn reshape_keeps_row_major_order() {
        let mut g = Graph::new();
        let data: Vec<f64> = (1..=6).map(f64::from).collect();
        let p = payload(&mut g, Tensor::matrix(2, 3, data.clone()).unwrap(), TaskId::new(0));
        let p = p.reshape(&mut g, &[3, 2]).unwrap();
        let v = g.tape.value(p.unmasked());
        assert_eq!(v.shape(), &[3, 2]);
        assert_eq!(v.data(), &data[..]);
    }

    #[test]
    fn add_zero_payload_and_chain_concatenation() {
        let mut g = Graph::new();
        let data = vec![1.0, 2.0];
        let base = payload(&mut g, Tensor::matrix(1, 2, data.clone()).unwrap(), TaskId::new(1));
        let m = masker(&mut g, "shared", vec![0.0, 0.0], false);
        let left = base.derive(base.unmasked(), Some(m.clone())).unwrap();
        let right = base.derive(base.unmasked(), Some(m)).unwrap();
        let sum = left.add(&mut g, right).unwrap();
        let tags: Vec<&str> = sum.mask_chain().iter().map(MaskerRef::tag).collect();
        assert_eq!(tags, ["shared", "shared"]);
        assert_eq!(g.tape.value(sum.unmasked()).data(), &data[..]);

        let zeros = payload(&mut g, Tensor::zeros(&[1, 2]), TaskId::new(1));
        let p = payload(&mut g, Tensor::matrix(1, 2, data.clone()).unwrap(), TaskId::new(1));
        let out = p.add(&mut g, zeros).unwrap();
        assert_eq!(g.tape.value(out.unmasked()).data(), &data[..]);
    }

    #[test]
    fn binary_ops_reject_task_mismatch() {
        let mut g = Graph::new();
        let a = payload(&mut g, Tensor::zeros(&[1, 2]), TaskId::new(0));
        let b = payload(&mut g, Tensor::zeros(&[1, 2]), TaskId::new(1));
        assert!(matches!(a.add(&mut g, b), Err(Error::Usage(_))));
    }

    #[test]
    fn compensation_registered_once_per_embedding() {
        let mut g = Graph::new();
        let x = g.tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let scale = MaskScale::new(1.0, 400.0).unwrap();
        let base = HatPayload::new(x, TaskId::new(0), scale, true);
        let m = masker(&mut g, "m", vec![0.0, 0.0], true);
        let e = m.embedding.unwrap();
        let left = base.derive(x, Some(m.clone())).unwrap();
        let right = base.derive(x, Some(m)).unwrap();
        left.add(&mut g, right).unwrap();
        assert_eq!(g.tape.hook_count(e), 1);
    }

    #[test]
    fn lazy_and_eager_materialization_agree() {
        let run = |eager: bool| {
            let mut g = Graph::new();
            let x = g.tape.constant(Tensor::matrix(2, 3, vec![0.1, -0.4, 2.0, 1.3, 0.7, -1.1]).unwrap());
            let p = HatPayload::new(x, TaskId::new(0), MaskScale::new(3.0, 400.0).unwrap(), false);
            let m = masker(&mut g, "m", vec![0.2, -0.5, 0.9], false);
            let mut p = p.derive(x, Some(m)).unwrap();
            if eager {
                p.masked_data(&mut g).unwrap();
            }
            let p = p.forward_by(&mut g, |g, v| g.tape.relu(v)).unwrap();
            g.tape.value(p.unmasked()).clone()
        };
        assert_eq!(run(true), run(false));
    }
}
