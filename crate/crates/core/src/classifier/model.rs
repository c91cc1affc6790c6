use std::any::Any;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Padding, Tape, Var};
use crate::classifier::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::tensor::{argmax, Scalar, Tensor};

/// One layer of a sequential network. The softmax is implicit after the last layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        filters: usize,
        kernel: usize,
        padding: Padding,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[height, width, channels]`.
    pub input_shape: [usize; 3],
    pub n_classes: usize,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl ModelConfig {
    /// conv(8) -> relu -> pool -> conv(16) -> relu -> pool -> dense(64) -> relu -> dense(n).
    pub fn reference(input_shape: [usize; 3], n_classes: usize, seed: u64) -> Self {
        Self::cnn(input_shape, n_classes, seed, 8, 16)
    }

    /// The reference architecture with doubled convolution channels.
    pub fn substitute(input_shape: [usize; 3], n_classes: usize, seed: u64) -> Self {
        Self::cnn(input_shape, n_classes, seed, 16, 32)
    }

    fn cnn(input_shape: [usize; 3], n_classes: usize, seed: u64, c1: usize, c2: usize) -> Self {
        let conv = |filters| Layer::Conv {
            filters,
            kernel: 3,
            padding: Padding::Same,
        };
        Self {
            input_shape,
            n_classes,
            layers: vec![
                conv(c1),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                conv(c2),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Flatten,
                Layer::Dense { units: 64 },
                Layer::Relu,
                Layer::Dense { units: n_classes },
            ],
            seed,
        }
    }

    /// A single dense layer on the flattened input (multinomial logistic regression).
    pub fn linear(input_shape: [usize; 3], n_classes: usize, seed: u64) -> Self {
        Self {
            input_shape,
            n_classes,
            layers: vec![Layer::Flatten, Layer::Dense { units: n_classes }],
            seed,
        }
    }

    /// Shapes of all parameter tensors in layer order, plus `(fan_in, fan_out)`
    /// for each. Fails if the layer stack does not fit the input or does not
    /// end in `n_classes` outputs.
    pub fn param_layout(&self) -> Result<Vec<(Vec<usize>, usize, usize)>> {
        if self.n_classes < 2 {
            return Err(invalid("a classifier needs at least 2 classes"));
        }
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(invalid(format!("input shape {:?} has a zero dimension", self.input_shape)));
        }
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut layout = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |reason: &str| Error::InvalidShape {
                shape: shape.clone(),
                reason: format!("layer {i} ({layer:?}): {reason}"),
            };
            match *layer {
                Layer::Conv {
                    filters,
                    kernel,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(bad("convolution needs an image-shaped input"));
                    }
                    if filters == 0 || kernel == 0 {
                        return Err(bad("filters and kernel must be positive"));
                    }
                    let (h, w, c) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = match padding {
                        Padding::Same if kernel % 2 == 1 => (h, w),
                        Padding::Same => return Err(bad("same padding needs an odd kernel")),
                        Padding::Valid if h >= kernel && w >= kernel => (h - kernel + 1, w - kernel + 1),
                        Padding::Valid => return Err(bad("input smaller than kernel")),
                    };
                    layout.push((vec![kernel, kernel, c, filters], kernel * kernel * c, kernel * kernel * filters));
                    layout.push((vec![filters], 0, 0));
                    shape = vec![oh, ow, filters];
                }
                Layer::Relu => {}
                Layer::MaxPool { size } => {
                    if shape.len() != 3 || size == 0 || shape[0] < size || shape[1] < size {
                        return Err(bad("pooling window does not fit"));
                    }
                    shape = vec![shape[0] / size, shape[1] / size, shape[2]];
                }
                Layer::Flatten => shape = vec![shape.iter().product()],
                Layer::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(bad("dense layer needs a flattened input"));
                    }
                    if units == 0 {
                        return Err(bad("units must be positive"));
                    }
                    layout.push((vec![shape[0], units], shape[0], units));
                    layout.push((vec![units], 0, 0));
                    shape = vec![units];
                }
            }
        }
        if shape != [self.n_classes] {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("network must end in {} outputs", self.n_classes),
            });
        }
        Ok(layout)
    }
}

/// Softmax output of the classifier for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionVector(Vec<f32>);

impl PredictionVector {
    pub fn from_probs(probs: Vec<f32>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f32] {
        &self.0
    }

    pub fn class(&self) -> usize {
        argmax(&self.0)
    }

    pub fn confidence(&self) -> f32 {
        self.0[self.class()]
    }
}

/// SHA-256 over the model configuration and parameter bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

/// A network configuration together with its parameters. Immutable; training
/// produces a new model.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Arc<Tensor<f32>>>,
    fingerprint: OnceLock<Fingerprint>,
}

const PREDICT_CHUNK: usize = 64;

impl Model {
    /// Uniform Glorot initialisation, seeded by `config.seed`; biases start at zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let layout = config.param_layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = layout
            .into_iter()
            .map(|(shape, fan_in, fan_out)| {
                if fan_in == 0 {
                    return Tensor::zeros(&shape);
                }
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
            })
            .collect();
        Self::from_params(config, params)
    }

    /// All parameters zero: every input maps to the uniform prediction.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let params = config
            .param_layout()?
            .into_iter()
            .map(|(shape, ..)| Tensor::zeros(&shape))
            .collect();
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor<f32>>) -> Result<Self> {
        let layout = config.param_layout()?;
        if layout.len() != params.len() {
            return Err(invalid(format!(
                "model expects {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((shape, ..), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "model parameters",
                    left: shape.clone(),
                    right: p.shape().to_vec(),
                });
            }
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    op: "model parameters".into(),
                });
            }
        }
        Ok(Self {
            config,
            params: params.into_iter().map(Arc::new).collect(),
            fingerprint: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Arc<Tensor<f32>>] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor<f32>> {
        self.params.iter().map(|p| (**p).clone()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.config.input_shape
    }

    pub fn fingerprint(&self) -> Fingerprint {
        *self.fingerprint.get_or_init(|| {
            let mut hasher = Sha256::new();
            let config = serde_json::to_vec(&self.config).expect("model config serializes");
            hasher.update((config.len() as u64).to_le_bytes());
            hasher.update(&config);
            for p in &self.params {
                for d in p.shape() {
                    hasher.update((*d as u64).to_le_bytes());
                }
                for v in p.data() {
                    hasher.update(v.to_le_bytes());
                }
            }
            Fingerprint(hasher.finalize().into())
        })
    }

    /// Records the parameters on `tape`, as variables when `trainable`.
    pub fn record_params<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let shared: Arc<Tensor<T>> = match (p as &dyn Any).downcast_ref::<Arc<Tensor<T>>>() {
                    Some(same) => Arc::clone(same),
                    None => Arc::new(p.cast()),
                };
                if trainable {
                    tape.variable_shared(shared)
                } else {
                    tape.constant_shared(shared)
                }
            })
            .collect()
    }

    /// Logits `[n, classes]` for a batch `[n, h, w, c]` already on the tape.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Var> {
        forward_layers(&self.config, tape, input, params)
    }

    fn check_image<T: Scalar>(&self, image: &Tensor<T>) -> Result<()> {
        if image.shape() != self.config.input_shape {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: self.config.input_shape.to_vec(),
                right: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn batch<T: Scalar>(&self, images: &[&Tensor<T>]) -> Result<Tensor<T>> {
        for im in images {
            self.check_image(im)?;
        }
        Tensor::stack(images)
    }

    /// Logits for each image of a batch.
    pub fn logits_batch(&self, images: &[&Tensor<f32>]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::<f32>::new();
        let params = self.record_params(&mut tape, false);
        let x = tape.constant(self.batch(images)?);
        let logits = self.forward(&mut tape, x, &params)?;
        let k = self.n_classes();
        Ok(tape.value(logits).data().chunks(k).map(<[f32]>::to_vec).collect())
    }

    pub fn logits(&self, image: &Tensor<f32>) -> Result<Vec<f32>> {
        Ok(self.logits_batch(&[image])?.remove(0))
    }

    pub fn predict(&self, image: &Tensor<f32>) -> Result<PredictionVector> {
        let logits = self.logits(image)?;
        Ok(to_prediction(&logits))
    }

    /// Predictions for many images; chunks are evaluated in parallel. Each
    /// result is bit-identical to calling [`Model::predict`] on that image.
    pub fn predict_batch(&self, images: &[Tensor<f32>]) -> Result<Vec<PredictionVector>> {
        let chunks: Vec<&[Tensor<f32>]> = images.chunks(PREDICT_CHUNK).collect();
        let out = exec::try_map(&chunks, |_, chunk| {
            let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
            self.logits_batch(&refs)
                .map(|rows| rows.iter().map(|l| to_prediction(l)).collect::<Vec<_>>())
        })?;
        Ok(out.into_iter().flatten().collect())
    }

    /// Fraction of `dataset` classified correctly.
    pub fn accuracy(&self, dataset: &LabeledDataset) -> Result<f64> {
        if dataset.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_batch(dataset.images())?;
        let correct = preds
            .iter()
            .zip(dataset.labels())
            .filter(|(p, &l)| p.class() == l)
            .count();
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Cross-entropy loss of one image, evaluated in precision `T`.
    pub fn loss<T: Scalar>(&self, image: &Tensor<T>, label: usize) -> Result<f64> {
        let mut tape = Tape::<T>::new();
        let params = self.record_params(&mut tape, false);
        let x = tape.constant(self.batch(&[image])?);
        let logits = self.forward(&mut tape, x, &params)?;
        let loss = tape.softmax_cross_entropy(logits, &[label])?;
        Ok(tape.value(loss).data()[0].as_f64())
    }

    /// Gradient of the cross-entropy loss with respect to the input pixels.
    pub fn input_gradient<T: Scalar>(&self, image: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
        Ok(self.input_gradient_batch(&[image], &[label])?.remove(0))
    }

    /// Per-sample input gradients for a batch. Samples do not interact, so
    /// each gradient is bit-identical to the single-image computation.
    pub fn input_gradient_batch<T: Scalar>(&self, images: &[&Tensor<T>], labels: &[usize]) -> Result<Vec<Tensor<T>>> {
        if images.len() != labels.len() {
            return Err(invalid("one label per image required"));
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::<T>::new();
        let params = self.record_params(&mut tape, false);
        let x = tape.variable(self.batch(images)?);
        let logits = self.forward(&mut tape, x, &params)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        // Seed with the batch size so the mean's 1/n cancels exactly.
        let seed = Tensor::scalar(T::from_f64(images.len() as f64));
        let mut grads = tape.backward_with_seed(loss, seed)?;
        let g = grads.take_or_zeros(x, tape.value(x).shape());
        Ok(g.unstack())
    }

    /// Forward pass on one image, kept alive for repeated vector-Jacobian products.
    pub fn input_graph(&self, image: &Tensor<f32>) -> Result<InputGraph> {
        let mut tape = Tape::<f32>::new();
        let params = self.record_params(&mut tape, false);
        let input = tape.variable(self.batch(&[image])?);
        let logits = self.forward(&mut tape, input, &params)?;
        Ok(InputGraph {
            tape,
            input,
            logits,
            image_shape: image.shape().to_vec(),
        })
    }
}

/// A recorded forward pass from one input image to its logits.
pub struct InputGraph {
    tape: Tape<f32>,
    input: Var,
    logits: Var,
    image_shape: Vec<usize>,
}

impl InputGraph {
    pub fn logits(&self) -> &[f32] {
        self.tape.value(self.logits).data()
    }

    /// `seedᵀ · ∂logits/∂input`, shaped like the input image.
    pub fn vjp(&self, seed: &[f32]) -> Result<Tensor<f32>> {
        let k = self.logits().len();
        let seed = Tensor::new(vec![1, k], seed.to_vec())?;
        let mut grads = self.tape.backward_with_seed(self.logits, seed)?;
        grads.take_or_zeros(self.input, &self.image_shape).reshape(&self.image_shape)
    }
}

pub(crate) fn to_prediction(logits: &[f32]) -> PredictionVector {
    let probs = crate::autodiff::softmax_rows(logits, logits.len());
    PredictionVector(probs.into_iter().map(|p| p as f32).collect())
}

pub(crate) fn forward_layers<T: Scalar>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    input: Var,
    params: &[Var],
) -> Result<Var> {
    let mut x = input;
    let mut p = params.iter().copied();
    let mut next = || p.next().ok_or_else(|| invalid("too few parameters for the layer stack"));
    for layer in &config.layers {
        x = match *layer {
            Layer::Conv { padding, .. } => {
                let (k, b) = (next()?, next()?);
                tape.conv2d(x, k, b, padding)?
            }
            Layer::Relu => tape.relu(x)?,
            Layer::MaxPool { size } => tape.max_pool(x, size)?,
            Layer::Flatten => tape.flatten(x)?,
            Layer::Dense { .. } => {
                let (w, b) = (next()?, next()?);
                let y = tape.matmul(x, w)?;
                tape.bias_add(y, b)?
            }
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(shape: [usize; 3], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&shape, |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn reference_layout_is_consistent() {
        let cfg = ModelConfig::reference([16, 16, 3], 10, 0);
        let layout = cfg.param_layout().unwrap();
        let shapes: Vec<_> = layout.iter().map(|(s, ..)| s.clone()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![3, 3, 3, 8],
                vec![8],
                vec![3, 3, 8, 16],
                vec![16],
                vec![256, 64],
                vec![64],
                vec![64, 10],
                vec![10]
            ]
        );
    }

    #[test]
    fn final_width_must_match_classes() {
        let mut cfg = ModelConfig::linear([4, 4, 1], 3, 0);
        cfg.layers[1] = Layer::Dense { units: 4 };
        assert!(cfg.param_layout().is_err());
        let mut cfg = ModelConfig::linear([4, 4, 1], 3, 0);
        cfg.layers.remove(0);
        assert!(cfg.param_layout().is_err());
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let model = Model::zeros(ModelConfig::reference([8, 8, 3], 5, 0)).unwrap();
        let p = model.predict(&image([8, 8, 3], 1)).unwrap();
        for &v in p.probs() {
            assert!((v - 0.2).abs() < 1e-7);
        }
    }

    #[test]
    fn prediction_is_normalized() {
        let model = Model::init(ModelConfig::reference([8, 8, 3], 7, 3)).unwrap();
        for s in 0..10 {
            let p = model.predict(&image([8, 8, 3], s)).unwrap();
            let sum: f64 = p.probs().iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(p.probs().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn batch_prediction_matches_single() {
        let model = Model::init(ModelConfig::reference([8, 8, 3], 4, 9)).unwrap();
        let images: Vec<_> = (0..70).map(|s| image([8, 8, 3], s)).collect();
        let batch = model.predict_batch(&images).unwrap();
        for (im, p) in images.iter().zip(&batch) {
            assert_eq!(&model.predict(im).unwrap(), p);
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = Model::init(ModelConfig::reference([8, 8, 3], 4, 9)).unwrap();
        assert!(matches!(
            model.predict(&image([8, 8, 1], 0)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(ModelConfig::reference([8, 8, 3], 4, 1)).unwrap();
        let b = Model::init(ModelConfig::reference([8, 8, 3], 4, 1)).unwrap();
        let c = Model::init(ModelConfig::reference([8, 8, 3], 4, 2)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn glorot_bounds_hold() {
        let model = Model::init(ModelConfig::reference([8, 8, 3], 4, 1)).unwrap();
        let bound = (6.0f64 / (27.0 + 72.0)).sqrt() as f32;
        assert!(model.params()[0].data().iter().all(|v| v.abs() <= bound));
        assert!(model.params()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_with_one_hot_seed_is_logit_gradient() {
        let model = Model::init(ModelConfig::reference([6, 6, 3], 3, 4)).unwrap();
        let x = image([6, 6, 3], 5);
        let graph = model.input_graph(&x).unwrap();
        assert_eq!(graph.logits(), model.logits(&x).unwrap().as_slice());
        let g = graph.vjp(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.shape(), &[6, 6, 3]);
        assert!(g.l2_norm() > 0.0);
    }
}
