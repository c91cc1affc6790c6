use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::fgsm_batch;
use crate::autodiff::Tape;
use crate::classifier::{LabeledDataset, Model, Split};
use crate::error::{invalid, Error, Result};
use crate::optim::sgd_step;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// FGSM step used for adversarial fine-tuning, if any.
    pub adversarial_epsilon: Option<f32>,
}

/// A trained model and how it was obtained.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn with_test_accuracy(mut self, test: &LabeledDataset) -> Result<Self> {
        self.meta.test_accuracy = Some(self.model.accuracy(test)?);
        Ok(self)
    }
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic given `config.seed`.
pub fn train(model: &Model, dataset: &LabeledDataset, config: &TrainConfig) -> Result<Checkpoint> {
    run(model, dataset, config, None)
}

/// Fine-tunes `model` with half of every mini-batch replaced by FGSM(`epsilon`)
/// versions crafted against the current parameters.
///
/// Uses the same shuffle schedule as [`train`], so `epsilon = 0` reproduces
/// plain training exactly.
pub fn adversarial_finetune(
    model: &Model,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    epsilon: f32,
) -> Result<Checkpoint> {
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    run(model, dataset, config, Some(epsilon))
}

fn run(model: &Model, dataset: &LabeledDataset, config: &TrainConfig, adversarial: Option<f32>) -> Result<Checkpoint> {
    if dataset.split() != Split::Train {
        return Err(invalid("training requires the train split"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(invalid("batch size and learning rate must be positive"));
    }
    if dataset.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if dataset.n_classes() != model.n_classes() {
        return Err(invalid(format!(
            "dataset has {} classes, model has {}",
            dataset.n_classes(),
            model.n_classes()
        )));
    }
    let mut params = model.param_tensors();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |detail: String| Error::Diverged { epoch, batch, detail };
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
            let mut images: Vec<Tensor<f32>> = chunk.iter().map(|&i| dataset.images()[i].clone()).collect();

            if let Some(eps) = adversarial {
                let current = Model::from_params(model.config().clone(), params.clone())?;
                let half = chunk.len() / 2;
                let clean = chunk.len() - half;
                let refs: Vec<&Tensor<f32>> = images[clean..].iter().collect();
                let adv = fgsm_batch(&current, &refs, &labels[clean..], eps)?;
                for (slot, x) in images[clean..].iter_mut().zip(adv) {
                    *slot = x;
                }
            }

            let mut tape = Tape::<f32>::new();
            let vars: Vec<_> = params.iter().map(|p| tape.variable(p.clone())).collect();
            let refs: Vec<&Tensor<f32>> = images.iter().collect();
            let x = tape.constant(Tensor::stack(&refs)?);
            let logits = model
                .forward(&mut tape, x, &vars)
                .map_err(|e| diverged(e.to_string()))?;
            let loss = tape
                .softmax_cross_entropy(logits, &labels)
                .map_err(|e| diverged(e.to_string()))?;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = vars
                .iter()
                .zip(&params)
                .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
                .collect();
            sgd_step(&mut params, &grads, config.learning_rate).map_err(|e| diverged(e.to_string()))?;
        }
    }

    let trained = Model::from_params(model.config().clone(), params)?;
    let train_accuracy = trained.accuracy(dataset)?;
    Ok(Checkpoint {
        model: trained,
        meta: TrainingMeta {
            epochs: config.epochs,
            train_accuracy,
            test_accuracy: None,
            adversarial_epsilon: adversarial,
        },
    })
}
