//! Adversarial example detection from distorted-replica prediction signatures.
//!
//! An input is distorted several ways, the classifier's softmax outputs on
//! the replicas are concatenated into a signature, and the signature is
//! compared (cosine similarity) with the mean training signature of the
//! class predicted on the undistorted input. Legitimate inputs land close to
//! their class mean; adversarial inputs, whose prediction usually does not
//! survive the distortions, end up nearly orthogonal to it.
//!
//! The crate also carries everything needed to exercise that detector at
//! desk scale: a small tape-based autodiff engine and CNN trainer, FGSM,
//! DeepFool and Carlini-Wagner attacks, the Feature Squeezing baseline, ROC
//! and AUC evaluation, binary file formats and an experiment driver.

pub mod attacks;
pub mod autodiff;
pub mod classifier;
pub mod detector;
pub mod distortions;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
