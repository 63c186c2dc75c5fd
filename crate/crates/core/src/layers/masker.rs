use std::collections::BTreeMap;
use std::rc::Rc;

use crate::autograd::sigmoid;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::payload::{MaskerRef, TaskId};
use crate::tensor::Tensor;

/// Threshold for turning a saturated mask into a stored binary mask.
pub const THETA_BIN: f64 = 0.5;

/// Embedding values are clamped to `[-E_MAX, E_MAX]` after every step.
pub const E_MAX: f64 = 6.0;

/// `σ(s·e)` elementwise.
pub fn attention(e: &Tensor, s: f64) -> Tensor {
    e.map(|v| sigmoid(s * v))
}

/// Per-task attention state of one layer's output units.
#[derive(Clone, Debug)]
pub struct HatMasker {
    tag: String,
    embeddings: Vec<Tensor>,
    cumulative: Tensor,
    stored: BTreeMap<usize, Vec<bool>>,
}

impl HatMasker {
    /// Embeddings start at zero; see `training::init_embeddings`.
    pub fn new(tag: impl Into<String>, features: usize, task_count: usize) -> Self {
        HatMasker {
            tag: tag.into(),
            embeddings: vec![Tensor::zeros(&[features]); task_count],
            cumulative: Tensor::zeros(&[features]),
            stored: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn features(&self) -> usize {
        self.cumulative.numel()
    }

    pub fn task_count(&self) -> usize {
        self.embeddings.len()
    }

    pub fn embedding_key(&self, task: usize) -> String {
        format!("{}.mask.{task}", self.tag)
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.embeddings.len() {
            return Err(Error::TaskRange {
                task,
                count: self.embeddings.len(),
            });
        }
        Ok(())
    }

    pub fn embedding(&self, task: usize) -> Result<&Tensor> {
        self.check_task(task)?;
        Ok(&self.embeddings[task])
    }

    pub fn embedding_mut(&mut self, task: usize) -> Result<&mut Tensor> {
        self.check_task(task)?;
        Ok(&mut self.embeddings[task])
    }

    pub fn embeddings(&self) -> &[Tensor] {
        &self.embeddings
    }

    pub(crate) fn embeddings_mut(&mut self) -> &mut [Tensor] {
        &mut self.embeddings
    }

    pub fn cumulative(&self) -> &Tensor {
        &self.cumulative
    }

    pub fn stored_mask(&self, task: usize) -> Option<&[bool]> {
        self.stored.get(&task).map(Vec::as_slice)
    }

    pub fn finalized_tasks(&self) -> impl Iterator<Item = usize> + '_ {
        self.stored.keys().copied()
    }

    pub fn is_finalized(&self, task: usize) -> bool {
        self.stored.contains_key(&task)
    }

    pub fn has_history(&self) -> bool {
        !self.stored.is_empty()
    }

    /// Current mask of `task` at scale `s`.
    pub fn mask(&self, task: usize, s: f64) -> Result<Tensor> {
        Ok(attention(self.embedding(task)?, s))
    }

    /// Ends training of `task`: folds its saturated mask into the cumulative
    /// mask and stores the binarized mask.
    pub fn finalize(&mut self, task: usize, s_max: f64) -> Result<()> {
        self.check_task(task)?;
        if self.stored.contains_key(&task) {
            return Err(Error::State(format!(
                "task {task} already finalized at masker {}",
                self.tag
            )));
        }
        let mask = attention(&self.embeddings[task], s_max);
        self.cumulative = self.cumulative.zip_map(&mask, f64::max)?;
        self.stored
            .insert(task, mask.data().iter().map(|&a| a > THETA_BIN).collect());
        Ok(())
    }

    /// Drops a task's stored mask and recomputes the cumulative mask from
    /// the remaining finalized tasks.
    pub(crate) fn unfinalize(&mut self, task: usize, s_max: f64) -> Result<()> {
        self.check_task(task)?;
        if self.stored.remove(&task).is_none() {
            return Err(Error::State(format!("task {task} not finalized at masker {}", self.tag)));
        }
        let mut cumulative = Tensor::zeros(&[self.features()]);
        for &t in self.stored.keys() {
            cumulative = cumulative.zip_map(&attention(&self.embeddings[t], s_max), f64::max)?;
        }
        self.cumulative = cumulative;
        Ok(())
    }

    pub fn clamp_embeddings(&mut self, bound: f64) {
        for e in &mut self.embeddings {
            for v in e.data_mut() {
                *v = v.clamp(-bound, bound);
            }
        }
    }

    pub(crate) fn restore(
        &mut self,
        embeddings: Vec<Tensor>,
        cumulative: Tensor,
        stored: BTreeMap<usize, Vec<bool>>,
    ) -> Result<()> {
        if embeddings.len() != self.embeddings.len()
            || embeddings.iter().any(|e| e.shape() != [self.features()])
            || cumulative.shape() != [self.features()]
            || stored.iter().any(|(&t, m)| t >= self.embeddings.len() || m.len() != self.features())
        {
            return Err(Error::Format(format!("masker state for {} does not fit", self.tag)));
        }
        self.embeddings = embeddings;
        self.cumulative = cumulative;
        self.stored = stored;
        Ok(())
    }

    /// Binds this masker for one forward pass. In plain mode no embedding is
    /// bound and the resulting mask is the identity.
    pub fn bind(&self, g: &mut Graph, task: TaskId, training: bool) -> Result<MaskerRef> {
        let embedding = match task.get() {
            Some(t) => {
                self.check_task(t)?;
                Some(g.bind(&self.embedding_key(t), &self.embeddings[t], training))
            }
            None => None,
        };
        Ok(MaskerRef {
            tag: self.tag.as_str().into(),
            features: self.features(),
            embedding,
            cumulative: Rc::new(self.cumulative.data().to_vec()),
        })
    }
}
