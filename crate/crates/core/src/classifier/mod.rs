//! Victim and substitute classifiers: architecture, training, queries.

mod dataset;
mod model;
mod train;

pub use dataset::{LabeledDataset, Split};
pub(crate) use model::to_prediction;
pub use model::{Fingerprint, InputGraph, Layer, Model, ModelConfig, PredictionVector};
pub use train::{adversarial_finetune, train, Checkpoint, TrainConfig, TrainingMeta};
