//! Adversarial example generation: FGSM, DeepFool and Carlini-Wagner (L2),
//! plus white-box / black-box attack-set assembly.
//!
//! Every attack produces a perturbation `eta`; the adversarial image is
//! always `clip(x + eta, 0, 1)` computed the same way, so that relation holds
//! bit-exactly for every stored result.

mod cw;
mod deepfool;
mod fgsm;
mod set;

use serde::{Deserialize, Serialize};

use crate::classifier::Model;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub use cw::carlini_wagner;
pub use deepfool::deepfool;
pub use fgsm::{fgsm, fgsm_batch, fgsm_from_gradient};
pub use set::{build_attack_set, AttackSet, AttackSetting};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Deepfool,
    Cw,
}

/// Optimizer settings for the Carlini-Wagner attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwConfig {
    pub learning_rate: f32,
    pub binary_search_steps: usize,
    pub initial_const: f64,
    /// Multiplier turning `kappa` in `[0, 1]` into a logit margin.
    pub logit_scale: f32,
    /// Stop a search step once the loss stops improving.
    pub abort_early: bool,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            binary_search_steps: 5,
            initial_const: 1e-2,
            logit_scale: 10.0,
            abort_early: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// FGSM step size.
    #[serde(default)]
    pub epsilon: f32,
    /// C&W confidence, in `[0, 1]`; scaled by `cw.logit_scale`.
    #[serde(default)]
    pub kappa: f32,
    /// DeepFool iterations, or gradient steps per C&W search step.
    pub max_iterations: usize,
    #[serde(default = "default_overshoot")]
    pub overshoot: f32,
    #[serde(default)]
    pub cw: CwConfig,
}

fn default_overshoot() -> f32 {
    0.02
}

impl AttackConfig {
    pub fn fgsm(epsilon: f32) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            kappa: 0.0,
            max_iterations: 1,
            overshoot: default_overshoot(),
            cw: CwConfig::default(),
        }
    }

    pub fn deepfool() -> Self {
        Self {
            kind: AttackKind::Deepfool,
            epsilon: 0.0,
            kappa: 0.0,
            max_iterations: 50,
            overshoot: default_overshoot(),
            cw: CwConfig::default(),
        }
    }

    pub fn carlini_wagner(kappa: f32) -> Self {
        Self {
            kind: AttackKind::Cw,
            epsilon: 0.0,
            kappa,
            max_iterations: 500,
            overshoot: default_overshoot(),
            cw: CwConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.kappa >= 0.0) {
            return Err(invalid("epsilon and kappa must be non-negative"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.overshoot >= 0.0) {
            return Err(invalid("overshoot must be non-negative"));
        }
        if self.kind == AttackKind::Cw
            && (self.cw.binary_search_steps == 0 || !(self.cw.learning_rate > 0.0) || !(self.cw.initial_const > 0.0))
        {
            return Err(invalid("C&W needs positive search steps, learning rate and initial constant"));
        }
        Ok(())
    }

    /// Runs the configured attack on one image. `label` is the class to move
    /// away from; `None` uses the model's own prediction.
    pub fn run(&self, model: &Model, image: &Tensor<f32>, label: Option<usize>) -> Result<AttackResult> {
        self.validate()?;
        match self.kind {
            AttackKind::Fgsm => fgsm(model, image, label, self.epsilon),
            AttackKind::Deepfool => deepfool(model, image, label, self),
            AttackKind::Cw => carlini_wagner(model, image, label, self.kappa, self),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    /// `clip(x + perturbation, 0, 1)`.
    pub adversarial: Tensor<f32>,
    /// Perturbation before clipping.
    pub perturbation: Tensor<f32>,
    /// Position of the source sample in the attacked dataset.
    pub source_index: usize,
    /// The model's prediction changed.
    pub success: bool,
    pub iterations: usize,
    /// `‖adversarial - x‖₂`.
    pub l2: f64,
}

/// Elementwise `clip(x + eta, 0, 1)`.
pub fn apply_perturbation(image: &Tensor<f32>, eta: &Tensor<f32>) -> Tensor<f32> {
    let data = image
        .data()
        .iter()
        .zip(eta.data())
        .map(|(&x, &e)| (x + e).clamp(0.0, 1.0))
        .collect();
    Tensor::new(image.shape().to_vec(), data).expect("perturbation shaped like the image")
}

/// Builds the result for `eta`, judging success with `model`.
pub(crate) fn finish(
    model: &Model,
    image: &Tensor<f32>,
    original_class: usize,
    eta: Tensor<f32>,
    iterations: usize,
) -> Result<AttackResult> {
    let adversarial = apply_perturbation(image, &eta);
    let success = model.predict(&adversarial)?.class() != original_class;
    let l2 = l2_distance(&adversarial, image);
    Ok(AttackResult {
        adversarial,
        perturbation: eta,
        source_index: 0,
        success,
        iterations,
        l2,
    })
}

pub(crate) fn l2_distance(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
