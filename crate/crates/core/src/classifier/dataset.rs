use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    /// Held out from training; used to calibrate thresholds.
    Validation,
    Test,
}

/// Images with class labels. All images share one `[h, w, c]` shape and
/// hold intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    n_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(invalid(format!("label {l} of sample {i} is not below {n_classes}")));
        }
        if let Some(first) = images.first() {
            if first.rank() != 3 {
                return Err(Error::InvalidShape {
                    shape: first.shape().to_vec(),
                    reason: "images must be [height, width, channels]".into(),
                });
            }
            for (i, im) in images.iter().enumerate() {
                if im.shape() != first.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "dataset images",
                        left: first.shape().to_vec(),
                        right: im.shape().to_vec(),
                    });
                }
                if im.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(invalid(format!("sample {i} has intensities outside [0, 1]")));
                }
            }
        }
        Ok(Self {
            images,
            labels,
            n_classes,
            split,
        })
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|im| im.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}
