//! Hard attention to the task (HAT) for continual learning.
//!
//! The crate is layered bottom-up:
//!
//! * [`autograd`]: a define-by-run reverse-mode tape with per-node gradient hooks.
//! * [`payload`]: [`HatPayload`], the tensor-plus-task value that flows
//!   through a network, applying masks lazily and recording mask order.
//! * [`layers`]: HAT-wrapped linear/conv layers whose gradient nullification
//!   and embedding-gradient compensation are installed as tape hooks, plus
//!   task-indexed modules.
//! * [`training`]: mask-scale schedules, the quota regularizer, embedding
//!   initialization and the sequential-task trainer.
//! * [`forgetting`]: selective removal of one task's exclusive parameters.
//! * [`experiments`]: the desk-scale experiment runners, checkpoints and
//!   report emitters used by the `hat-bench` binary.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod forgetting;
pub mod graph;
pub mod layers;
pub mod network;
pub mod payload;
pub mod tensor;
pub mod training;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use graph::Graph;
pub use network::HatNetwork;
pub use payload::{HatPayload, MaskScale, TaskId};
pub use tensor::Tensor;
