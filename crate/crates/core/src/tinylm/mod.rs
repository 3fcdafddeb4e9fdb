//! A one-block attention language model with hand-derived gradients.
//!
//! Supports bidirectional (masked) and causal attention, plain SGD and
//! DP-SGD, greedy generation and masked top-k prediction.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{Checkpoint, Provenance};
pub use model::{rank, softmax, Attention, Evaluation, Model, ModelConfig, WeightedSlot};
pub use train::{dp_sgd_step, sgd_step, DpConfig, EpochStats, TrainConfig, Trainer};
