use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::classifier::{ModelConfig, TrainConfig};
use crate::distortions::DistortionSet;
use crate::error::{invalid, Result};

/// Every seed the pipeline uses. Nothing draws from system entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub victim: u64,
    pub substitute: u64,
    pub shuffle: u64,
    pub pairing: u64,
}

impl Seeds {
    /// Distinct per-stage seeds derived from one number.
    pub fn from_master(seed: u64) -> Self {
        let at = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
        Self {
            data: at(0),
            victim: at(1),
            substitute: at(2),
            shuffle: at(3),
            pairing: at(4),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    /// Legitimate samples used only to calibrate thresholds.
    pub validation_per_class: usize,
    pub test_per_class: usize,
    /// Containers to load instead of generating data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Reference,
    Substitute,
    Linear,
}

impl Architecture {
    pub fn build(self, input_shape: [usize; 3], n_classes: usize, seed: u64) -> ModelConfig {
        match self {
            Self::Reference => ModelConfig::reference(input_shape, n_classes, seed),
            Self::Substitute => ModelConfig::substitute(input_shape, n_classes, seed),
            Self::Linear => ModelConfig::linear(input_shape, n_classes, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialTraining {
    /// FGSM step used both for fine-tuning and for the robustness test set.
    pub epsilon: f32,
    pub epochs: usize,
    pub learning_rate: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedAttack {
    pub name: String,
    pub attack: AttackConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub victim: Architecture,
    pub substitute: Architecture,
    pub train: Schedule,
    pub adversarial_training: AdversarialTraining,
    pub attacks: Vec<NamedAttack>,
    /// Attack at most this many test samples per white-box attack set.
    pub attack_limit: usize,
    /// Attacks transferred from the substitute to the victim.
    pub black_box_attacks: Vec<String>,
    /// Attack at most this many test samples per black-box attack set.
    pub black_box_limit: usize,
    pub distortions: DistortionSet,
    pub target_fpr: f64,
    pub histogram_bins: usize,
    pub seeds: Seeds,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The desk-scale benchmark: ten glyph classes at 16×16.
    pub fn desk(seed: u64) -> Self {
        let named = |name: &str, attack| NamedAttack {
            name: name.into(),
            attack,
        };
        Self {
            data: DataConfig {
                n_classes: 10,
                image_size: 16,
                train_per_class: 200,
                validation_per_class: 100,
                test_per_class: 100,
                train_path: None,
                validation_path: None,
                test_path: None,
            },
            victim: Architecture::Reference,
            substitute: Architecture::Substitute,
            train: Schedule {
                epochs: 24,
                batch_size: 32,
                learning_rate: 0.05,
            },
            adversarial_training: AdversarialTraining {
                epsilon: 0.1,
                epochs: 12,
                learning_rate: 0.02,
            },
            attacks: vec![
                named("fgsm", AttackConfig::fgsm(0.1)),
                named("deepfool", AttackConfig::deepfool()),
                named("cw0", AttackConfig::carlini_wagner(0.0)),
                named("cw5", AttackConfig::carlini_wagner(0.5)),
                named("cw9", AttackConfig::carlini_wagner(0.9)),
            ],
            attack_limit: 100,
            black_box_attacks: vec!["cw0".into(), "deepfool".into(), "fgsm".into()],
            black_box_limit: 300,
            distortions: DistortionSet::three(),
            target_fpr: 0.05,
            histogram_bins: 20,
            seeds: Seeds::from_master(seed),
            out_dir: PathBuf::from("run"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_classes < 2 || d.train_per_class == 0 || d.test_per_class == 0 || d.validation_per_class == 0 {
            return Err(invalid("data needs at least 2 classes and samples in every split"));
        }
        for p in [&d.train_path, &d.validation_path, &d.test_path].into_iter().flatten() {
            if !p.is_file() {
                return Err(invalid(format!("data file {} does not exist", p.display())));
            }
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return Err(invalid("training needs a positive batch size and learning rate"));
        }
        let adv = &self.adversarial_training;
        if !(adv.epsilon >= 0.0) || !(adv.learning_rate > 0.0) {
            return Err(invalid("adversarial training needs epsilon >= 0 and a positive learning rate"));
        }
        if self.attacks.is_empty() {
            return Err(invalid("at least one attack is required"));
        }
        let mut names = HashSet::new();
        for a in &self.attacks {
            if !names.insert(a.name.as_str()) {
                return Err(invalid(format!("duplicate attack name {:?}", a.name)));
            }
            if a.name.is_empty() || !a.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(invalid(format!("attack name {:?} must be alphanumeric", a.name)));
            }
            a.attack.validate()?;
        }
        if self.attack_limit == 0 || self.black_box_limit == 0 {
            return Err(invalid("attack limits must be positive"));
        }
        for name in &self.black_box_attacks {
            if self.attack(name).is_none() {
                return Err(invalid(format!("black-box attack {name:?} is not configured")));
            }
        }
        if !(self.target_fpr > 0.0 && self.target_fpr < 1.0) {
            return Err(invalid("target_fpr must be in (0, 1)"));
        }
        if self.histogram_bins < 2 {
            return Err(invalid("histogram_bins must be at least 2"));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.data.image_size, self.data.image_size, 3]
    }

    pub fn victim_config(&self) -> ModelConfig {
        self.victim.build(self.input_shape(), self.data.n_classes, self.seeds.victim)
    }

    pub fn substitute_config(&self) -> ModelConfig {
        self.substitute.build(self.input_shape(), self.data.n_classes, self.seeds.substitute)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.seeds.shuffle,
        }
    }

    pub fn adversarial_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.adversarial_training.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.adversarial_training.learning_rate,
            seed: self.seeds.shuffle.wrapping_add(1),
        }
    }

    /// First configured attack of the given kind.
    pub fn attack_of_kind(&self, kind: AttackKind) -> Option<&NamedAttack> {
        self.attacks.iter().find(|a| a.attack.kind == kind)
    }

    pub fn attack(&self, name: &str) -> Option<&NamedAttack> {
        self.attacks.iter().find(|a| a.name == name)
    }
}
