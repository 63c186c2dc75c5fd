//! Mask-scale schedules, the quota regularizer, embedding initialization
//! and the sequential-task training loop.

mod init;
mod optim;
mod regularizer;
mod schedule;
mod trainer;

pub use init::{init_embedding_row, init_embeddings, EmbeddingInit};
pub use optim::Sgd;
pub use regularizer::{regularizer, regularizer_value, RegValue};
pub use schedule::{scale_cosine, scale_linear, ScheduleKind, ScheduleState};
pub use trainer::{
    argmax_rows, evaluate, mask_regularizer, train_task, EpochMetrics, TaskMetrics, Trainer, TrainerConfig,
};
