//! Desk-scale learning task: Gaussian-blob classification, IID sharding,
//! a small ReLU MLP trained with plain mini-batch SGD, and macro-F1
//! evaluation.

mod metrics;
mod mlp;
mod task;

pub use metrics::{evaluate, metrics_from_predictions, EvalMetrics};
pub use mlp::{local_train, Mlp, TrainConfig};
pub use task::{
    generate_task, partition_iid, write_dataset_csv, DataShard, Dataset, Example, SyntheticTask,
    TaskSpec,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("cannot split {examples} examples across {nodes} nodes")]
    InsufficientData { examples: usize, nodes: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("empty validation split")]
    EmptyEval,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
