//! End-to-end experiment driver.
//!
//! Each stage is a plain function of its inputs, so the command-line tool can
//! run stages one at a time from files while [`run`] chains them in memory.
//! [`evaluate`] turns the artifacts into a [`Report`] whose tables follow the
//! usual layout for this kind of study: attack-set statistics, white-box
//! AUCs, robustness before and after adversarial training, AUCs against the
//! hardened model, a distortion ablation and black-box detection rates at a
//! fixed false-positive rate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{build_attack_set, fgsm_batch, AttackKind, AttackSet, AttackSetting};
use crate::classifier::{adversarial_finetune, train, Checkpoint, LabeledDataset, Model, Split};
use crate::detector::{
    calibrate_threshold, compute_class_statistics, fs_legitimacy, fs_scores, is_rejected, ClassStatistics, Detector,
    Orientation,
};
use crate::distortions::DistortionSet;
use crate::error::{invalid, Result};
use crate::evaluation::{auc, export_histogram, pair_sets, roc_curve, ScoredSample, ScoredSet, Truth};
use crate::exec;
use crate::io::{self, ExperimentConfig};
use crate::tensor::Tensor;

pub const VICTIM: &str = "victim";
pub const SUBSTITUTE: &str = "substitute";
pub const HARDENED: &str = "hardened";
/// Prefix of black-box attack-set files.
pub const TRANSFER: &str = "transfer";

/// Train, validation and test splits.
#[derive(Clone, Debug)]
pub struct Data {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
}

impl Data {
    /// Renders the three splits from the data seed.
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        let d = &config.data;
        let seed = config.seeds.data;
        let split = |per_class, stream: u64, split| {
            io::generate_synthetic_dataset(d.n_classes, per_class, d.image_size, seed.wrapping_add(stream << 32), split)
        };
        Ok(Self {
            train: split(d.train_per_class, 0, Split::Train)?,
            validation: split(d.validation_per_class, 1, Split::Validation)?,
            test: split(d.test_per_class, 2, Split::Test)?,
        })
    }

    /// Loads every split that has a path in the config and generates the rest.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let d = &config.data;
        if d.train_path.is_none() && d.validation_path.is_none() && d.test_path.is_none() {
            return Self::generate(config);
        }
        let generated = Self::generate(config)?;
        let pick = |path: &Option<PathBuf>, split, fallback: LabeledDataset| match path {
            Some(p) => io::load_dataset(p, split),
            None => Ok(fallback),
        };
        Ok(Self {
            train: pick(&d.train_path, Split::Train, generated.train)?,
            validation: pick(&d.validation_path, Split::Validation, generated.validation)?,
            test: pick(&d.test_path, Split::Test, generated.test)?,
        })
    }

    pub fn load(layout: &RunLayout) -> Result<Self> {
        Ok(Self {
            train: io::load_dataset(&layout.dataset(Split::Train), Split::Train)?,
            validation: io::load_dataset(&layout.dataset(Split::Validation), Split::Validation)?,
            test: io::load_dataset(&layout.dataset(Split::Test), Split::Test)?,
        })
    }

    pub fn save(&self, layout: &RunLayout) -> Result<()> {
        for d in [&self.train, &self.validation, &self.test] {
            io::save_dataset(&layout.dataset(d.split()), d)?;
        }
        Ok(())
    }
}

/// File names inside a run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        let name = match split {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        self.root.join("data").join(format!("{name}.advt"))
    }

    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.root.join("models").join(format!("{model}.advc"))
    }

    pub fn statistics(&self, model: &str) -> PathBuf {
        self.root.join("stats").join(format!("{model}.advs"))
    }

    /// `prefix` is a model name for white-box sets or [`TRANSFER`].
    pub fn attack_set(&self, prefix: &str, attack: &str) -> PathBuf {
        self.root.join("attacks").join(format!("{prefix}-{attack}.advt"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

pub fn train_victim(config: &ExperimentConfig, data: &Data) -> Result<Checkpoint> {
    let model = Model::init(config.victim_config())?;
    train(&model, &data.train, &config.train_config())?.with_test_accuracy(&data.test)
}

pub fn train_substitute(config: &ExperimentConfig, data: &Data) -> Result<Checkpoint> {
    let model = Model::init(config.substitute_config())?;
    let mut schedule = config.train_config();
    schedule.seed = config.seeds.shuffle.wrapping_add(2);
    train(&model, &data.train, &schedule)?.with_test_accuracy(&data.test)
}

/// Adversarially fine-tunes the victim with FGSM examples.
pub fn harden(config: &ExperimentConfig, victim: &Model, data: &Data) -> Result<Checkpoint> {
    let adv = &config.adversarial_training;
    adversarial_finetune(victim, &data.train, &config.adversarial_train_config(), adv.epsilon)?
        .with_test_accuracy(&data.test)
}

pub fn statistics(config: &ExperimentConfig, model: &Model, data: &Data) -> Result<ClassStatistics> {
    compute_class_statistics(model, &data.train, &config.distortions)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedSet {
    pub name: String,
    pub set: AttackSet,
}

/// Every configured attack, crafted on and judged by `model`.
pub fn white_box_sets(config: &ExperimentConfig, model: &Model, test: &LabeledDataset) -> Result<Vec<NamedSet>> {
    config
        .attacks
        .iter()
        .map(|a| {
            Ok(NamedSet {
                name: a.name.clone(),
                set: build_attack_set(model, test, &a.attack, model, Some(config.attack_limit))?,
            })
        })
        .collect()
}

/// The configured black-box attacks, crafted on `substitute` and judged by `victim`.
pub fn black_box_sets(
    config: &ExperimentConfig,
    substitute: &Model,
    victim: &Model,
    test: &LabeledDataset,
) -> Result<Vec<NamedSet>> {
    config
        .black_box_attacks
        .iter()
        .map(|name| {
            let a = config
                .attack(name)
                .ok_or_else(|| invalid(format!("black-box attack {name:?} is not configured")))?;
            Ok(NamedSet {
                name: name.clone(),
                set: build_attack_set(substitute, test, &a.attack, victim, Some(config.black_box_limit))?,
            })
        })
        .collect()
}

/// Everything [`evaluate`] reads. Optional parts produce empty tables.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub data: Data,
    pub victim: Checkpoint,
    pub victim_stats: ClassStatistics,
    pub white_box: Vec<NamedSet>,
    pub substitute: Option<Checkpoint>,
    pub black_box: Vec<NamedSet>,
    pub hardened: Option<Checkpoint>,
    pub hardened_stats: Option<ClassStatistics>,
    pub hardened_white_box: Vec<NamedSet>,
}

impl Inputs {
    /// Reads whatever the stage commands have written under `layout`. Data,
    /// the victim, its statistics and at least one of its attack sets are
    /// required; configured sets that were never written are skipped.
    pub fn load(config: &ExperimentConfig, layout: &RunLayout) -> Result<Self> {
        let required = |p: PathBuf| -> Result<PathBuf> {
            if p.is_file() {
                Ok(p)
            } else {
                Err(invalid(format!("missing {}", p.display())))
            }
        };
        let optional_checkpoint = |name| -> Result<Option<Checkpoint>> {
            let p = layout.checkpoint(name);
            p.is_file().then(|| io::load_checkpoint(&p)).transpose()
        };
        let sets = |prefix: &str, names: &mut dyn Iterator<Item = &String>| -> Result<Vec<NamedSet>> {
            let mut out = Vec::new();
            for name in names {
                let p = layout.attack_set(prefix, name);
                if p.is_file() {
                    out.push(NamedSet {
                        name: name.clone(),
                        set: io::load_attack_set(&p)?,
                    });
                }
            }
            Ok(out)
        };
        let attack_names = || config.attacks.iter().map(|a| &a.name);
        for split in [Split::Train, Split::Validation, Split::Test] {
            required(layout.dataset(split))?;
        }
        let victim = io::load_checkpoint(&required(layout.checkpoint(VICTIM))?)?;
        let victim_stats = io::load_statistics(&required(layout.statistics(VICTIM))?)?;
        let white_box = sets(VICTIM, &mut attack_names())?;
        if white_box.is_empty() {
            return Err(invalid(format!(
                "no white-box attack sets under {}",
                layout.root().join("attacks").display()
            )));
        }
        let hardened = optional_checkpoint(HARDENED)?;
        let hardened_stats = match &hardened {
            Some(_) if layout.statistics(HARDENED).is_file() => Some(io::load_statistics(&layout.statistics(HARDENED))?),
            _ => None,
        };
        Ok(Self {
            data: Data::load(layout)?,
            victim,
            victim_stats,
            white_box,
            substitute: optional_checkpoint(SUBSTITUTE)?,
            black_box: sets(TRANSFER, &mut config.black_box_attacks.iter())?,
            hardened_white_box: if hardened_stats.is_some() {
                sets(HARDENED, &mut attack_names())?
            } else {
                Vec::new()
            },
            hardened,
            hardened_stats,
        })
    }

    /// Writes every artifact under `layout`.
    pub fn save(&self, layout: &RunLayout) -> Result<()> {
        let n = self.data.test.n_classes();
        self.data.save(layout)?;
        io::save_checkpoint(&layout.checkpoint(VICTIM), &self.victim)?;
        io::save_statistics(&layout.statistics(VICTIM), &self.victim_stats)?;
        for s in &self.white_box {
            io::save_attack_set(&layout.attack_set(VICTIM, &s.name), &s.set, n)?;
        }
        if let Some(c) = &self.substitute {
            io::save_checkpoint(&layout.checkpoint(SUBSTITUTE), c)?;
        }
        for s in &self.black_box {
            io::save_attack_set(&layout.attack_set(TRANSFER, &s.name), &s.set, n)?;
        }
        if let Some(c) = &self.hardened {
            io::save_checkpoint(&layout.checkpoint(HARDENED), c)?;
        }
        if let Some(s) = &self.hardened_stats {
            io::save_statistics(&layout.statistics(HARDENED), s)?;
        }
        for s in &self.hardened_white_box {
            io::save_attack_set(&layout.attack_set(HARDENED, &s.name), &s.set, n)?;
        }
        Ok(())
    }
}

/// Runs every stage in memory. The substitute is skipped when no black-box
/// attacks are configured.
pub fn run(config: &ExperimentConfig) -> Result<Inputs> {
    config.validate()?;
    let data = Data::prepare(config)?;
    let victim = train_victim(config, &data)?;
    let victim_stats = statistics(config, &victim.model, &data)?;
    let white_box = white_box_sets(config, &victim.model, &data.test)?;
    let (substitute, black_box) = if config.black_box_attacks.is_empty() {
        (None, Vec::new())
    } else {
        let s = train_substitute(config, &data)?;
        let sets = black_box_sets(config, &s.model, &victim.model, &data.test)?;
        (Some(s), sets)
    };
    let hardened = harden(config, &victim.model, &data)?;
    let hardened_stats = statistics(config, &hardened.model, &data)?;
    let hardened_white_box = white_box_sets(config, &hardened.model, &data.test)?;
    Ok(Inputs {
        data,
        victim,
        victim_stats,
        white_box,
        substitute,
        black_box,
        hardened: Some(hardened),
        hardened_stats: Some(hardened_stats),
        hardened_white_box,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub models: Vec<ModelSummary>,
    pub attack_sets: Vec<AttackSetSummary>,
    pub white_box: Vec<DetectionRow>,
    pub adversarial_training: Option<Robustness>,
    pub hardened_white_box: Vec<DetectionRow>,
    pub ablation: Vec<AblationRow>,
    pub black_box: Option<BlackBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub fingerprint: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean top-class probability on the test split.
    pub test_confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSetSummary {
    pub attack: String,
    /// Model the set was crafted against.
    pub target: String,
    pub setting: AttackSetting,
    pub kind: AttackKind,
    pub attempted: usize,
    pub retained: usize,
    pub success_rate: f64,
    /// Accuracy of the judging model on every attacked sample.
    pub accuracy: f64,
    /// Mean top-class probability of the judging model on the retained samples.
    pub confidence: Option<f64>,
    /// Accuracy of the crafting model on the retained samples, for transfer sets.
    pub crafting_accuracy: Option<f64>,
    pub mean_l2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub attack: String,
    /// Adversarial samples; the same number of legitimate ones are paired in.
    pub samples: usize,
    pub auc: f64,
    pub fs_auc: f64,
    pub median_legitimate: f64,
    pub median_adversarial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub epsilon: f32,
    pub clean_accuracy_before: f64,
    pub clean_accuracy_after: f64,
    /// Accuracy on FGSM versions of the whole test split, crafted against
    /// the model being measured.
    pub fgsm_accuracy_before: f64,
    pub fgsm_accuracy_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub distortions: String,
    pub attack: String,
    pub auc: f64,
    pub fs_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackBox {
    pub target_fpr: f64,
    /// Correctly classified validation samples used for calibration.
    pub calibration_samples: usize,
    /// Correctly classified test samples used to measure rejection.
    pub held_out_samples: usize,
    pub ours: ThresholdRow,
    pub fs: ThresholdRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    /// Projection score for ours, raw L1 score for FS.
    pub threshold: f64,
    /// Fraction of held-out legitimate samples rejected.
    pub held_out_rejection: f64,
    pub detection: Vec<DetectionRate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRate {
    pub attack: String,
    pub samples: usize,
    pub rate: Option<f64>,
}

/// A CSV file to write next to the report, relative to the run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub path: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn detection(&self, attack: &str) -> Option<&DetectionRow> {
        self.white_box.iter().find(|r| r.attack == attack)
    }

    pub fn hardened_detection(&self, attack: &str) -> Option<&DetectionRow> {
        self.hardened_white_box.iter().find(|r| r.attack == attack)
    }
}

impl Outcome {
    pub fn save(&self, layout: &RunLayout) -> Result<()> {
        io::write_atomic(&layout.report(), self.report.to_json().as_bytes())?;
        for a in &self.artifacts {
            io::write_atomic(&layout.artifact(&a.path), a.contents.as_bytes())?;
        }
        Ok(())
    }
}

/// Computes every table of the report from the run's artifacts.
pub fn evaluate(config: &ExperimentConfig, inputs: &Inputs) -> Result<Outcome> {
    let data = &inputs.data;
    let victim = &inputs.victim.model;
    let mut artifacts = Vec::new();

    let mut models = vec![model_summary(VICTIM, &inputs.victim, &data.test)?];
    if let Some(c) = &inputs.substitute {
        models.push(model_summary(SUBSTITUTE, c, &data.test)?);
    }
    if let Some(c) = &inputs.hardened {
        models.push(model_summary(HARDENED, c, &data.test)?);
    }

    let mut attack_sets = Vec::new();
    for s in &inputs.white_box {
        attack_sets.push(set_summary(VICTIM, s, victim, None)?);
    }
    if let Some(sub) = &inputs.substitute {
        for s in &inputs.black_box {
            attack_sets.push(set_summary(TRANSFER, s, victim, Some(&sub.model))?);
        }
    }
    if let Some(h) = &inputs.hardened {
        for s in &inputs.hardened_white_box {
            attack_sets.push(set_summary(HARDENED, s, &h.model, None)?);
        }
    }

    let detector = Detector::new(victim.clone(), inputs.victim_stats.clone())?;
    let mut white_box = Vec::new();
    let mut pairs = Vec::new();
    for s in &inputs.white_box {
        let Some(pair) = Pair::build(s, &data.test, victim, config.seeds.pairing)? else {
            continue;
        };
        let (row, ours, fs) = detection_row(&detector, &pair, &s.name)?;
        artifacts.push(csv(format!("histograms/{}.csv", s.name), export_histogram(&ours, config.histogram_bins)?.to_csv()));
        artifacts.push(csv(format!("roc/{}-ours.csv", s.name), roc_curve(&ours)?.to_csv()));
        artifacts.push(csv(format!("roc/{}-fs.csv", s.name), roc_curve(&fs)?.to_csv()));
        white_box.push(row);
        pairs.push((s.name.clone(), pair));
    }

    let adversarial_training = match &inputs.hardened {
        Some(h) => Some(robustness(config, victim, &h.model, &data.test)?),
        None => None,
    };

    let mut hardened_white_box = Vec::new();
    if let (Some(h), Some(stats)) = (&inputs.hardened, &inputs.hardened_stats) {
        let detector = Detector::new(h.model.clone(), stats.clone())?;
        for s in &inputs.hardened_white_box {
            if let Some(pair) = Pair::build(s, &data.test, &h.model, config.seeds.pairing)? {
                hardened_white_box.push(detection_row(&detector, &pair, &s.name)?.0);
            }
        }
    }

    let mut ablation = Vec::new();
    for distortions in ablation_sets(&config.distortions) {
        let stats = compute_class_statistics(victim, &data.train, &distortions)?;
        let detector = Detector::new(victim.clone(), stats)?;
        for (name, pair) in &pairs {
            let (row, _, _) = detection_row(&detector, pair, name)?;
            ablation.push(AblationRow {
                distortions: distortions.label(),
                attack: name.clone(),
                auc: row.auc,
                fs_auc: row.fs_auc,
            });
        }
    }

    let black_box = if inputs.substitute.is_some() {
        Some(black_box(config, &detector, data, &inputs.black_box)?)
    } else {
        None
    };

    Ok(Outcome {
        report: Report {
            config: config.clone(),
            models,
            attack_sets,
            white_box,
            adversarial_training,
            hardened_white_box,
            ablation,
            black_box,
        },
        artifacts,
    })
}

fn csv(path: String, contents: String) -> Artifact {
    Artifact { path, contents }
}

/// Each distortion alone, then the growing prefixes of the full set.
pub fn ablation_sets(full: &DistortionSet) -> Vec<DistortionSet> {
    let all = full.as_slice();
    let mut out: Vec<DistortionSet> = all.iter().map(|&d| DistortionSet::single(d)).collect();
    for k in 2..=all.len() {
        out.push(DistortionSet::new(all[..k].to_vec()).expect("non-empty prefix"));
    }
    out
}

fn model_summary(name: &str, checkpoint: &Checkpoint, test: &LabeledDataset) -> Result<ModelSummary> {
    let predictions = checkpoint.model.predict_batch(test.images())?;
    let correct = predictions.iter().zip(test.labels()).filter(|(p, &l)| p.class() == l).count();
    Ok(ModelSummary {
        name: name.into(),
        fingerprint: checkpoint.model.fingerprint().to_string(),
        train_accuracy: checkpoint.meta.train_accuracy,
        test_accuracy: correct as f64 / test.len() as f64,
        test_confidence: mean(predictions.iter().map(|p| p.confidence() as f64)).unwrap_or(0.0),
    })
}

fn set_summary(target: &str, s: &NamedSet, judge: &Model, crafting: Option<&Model>) -> Result<AttackSetSummary> {
    let set = &s.set;
    let adversarial: Vec<Tensor<f32>> = set.results.iter().map(|r| r.adversarial.clone()).collect();
    let confidence = mean(judge.predict_batch(&adversarial)?.iter().map(|p| p.confidence() as f64));
    let crafting_accuracy = match crafting {
        Some(m) if !adversarial.is_empty() => {
            let p = m.predict_batch(&adversarial)?;
            mean(p.iter().zip(&set.labels).map(|(p, &l)| f64::from(u8::from(p.class() == l))))
        }
        _ => None,
    };
    Ok(AttackSetSummary {
        attack: s.name.clone(),
        target: target.into(),
        setting: set.setting,
        kind: set.config.kind,
        attempted: set.attempted,
        retained: set.len(),
        success_rate: set.success_rate(),
        accuracy: if set.attempted == 0 { 0.0 } else { 1.0 - set.success_rate() },
        confidence,
        crafting_accuracy,
        mean_l2: set.mean_l2(),
    })
}

/// An attack set and as many correctly classified legitimate test samples.
struct Pair {
    legitimate_ids: Vec<usize>,
    legitimate: Vec<Tensor<f32>>,
    adversarial_ids: Vec<usize>,
    adversarial: Vec<Tensor<f32>>,
}

impl Pair {
    fn build(s: &NamedSet, test: &LabeledDataset, model: &Model, seed: u64) -> Result<Option<Self>> {
        if s.set.is_empty() {
            return Ok(None);
        }
        let p = pair_sets(&s.set, test, model, seed)?;
        Ok(Some(Self {
            legitimate_ids: p.legitimate_indices,
            legitimate: p.legitimate,
            adversarial_ids: s.set.results.iter().map(|r| r.source_index).collect(),
            adversarial: p.adversarial,
        }))
    }

    fn scored(&self, legitimate: &[(usize, f64)], adversarial: &[(usize, f64)]) -> Result<ScoredSet> {
        let tag = |ids: &[usize], scores: &[(usize, f64)], truth| -> Vec<ScoredSample> {
            ids.iter()
                .zip(scores)
                .map(|(&id, &(class, score))| ScoredSample { id, score, truth, class })
                .collect()
        };
        let mut samples = tag(&self.legitimate_ids, legitimate, Truth::Legitimate);
        samples.extend(tag(&self.adversarial_ids, adversarial, Truth::Adversarial));
        ScoredSet::new(samples)
    }
}

fn detection_row(detector: &Detector, pair: &Pair, attack: &str) -> Result<(DetectionRow, ScoredSet, ScoredSet)> {
    let model = detector.model();
    let distortions = &detector.stats().distortions;
    let legit = detector.score_batch(&pair.legitimate)?;
    let adv = detector.score_batch(&pair.adversarial)?;
    let ours = pair.scored(&legit, &adv)?;
    let fs_of = |images: &[Tensor<f32>], scored: &[(usize, f64)]| -> Result<Vec<(usize, f64)>> {
        Ok(fs_scores(model, images, distortions)?
            .into_iter()
            .zip(scored)
            .map(|(s, &(class, _))| (class, fs_legitimacy(s)))
            .collect())
    };
    let fs = pair.scored(&fs_of(&pair.legitimate, &legit)?, &fs_of(&pair.adversarial, &adv)?)?;
    let row = DetectionRow {
        attack: attack.into(),
        samples: pair.adversarial.len(),
        auc: auc(&roc_curve(&ours)?),
        fs_auc: auc(&roc_curve(&fs)?),
        median_legitimate: median(legit.iter().map(|s| s.1).collect()),
        median_adversarial: median(adv.iter().map(|s| s.1).collect()),
    };
    Ok((row, ours, fs))
}

/// Accuracy of `model` on FGSM(`epsilon`) versions of every test sample.
pub fn fgsm_accuracy(model: &Model, test: &LabeledDataset, epsilon: f32) -> Result<f64> {
    const CHUNK: usize = 64;
    let chunks: Vec<usize> = (0..test.len()).step_by(CHUNK).collect();
    let correct = exec::try_map(&chunks, |_, &start| -> Result<usize> {
        let end = (start + CHUNK).min(test.len());
        let images: Vec<&Tensor<f32>> = test.images()[start..end].iter().collect();
        let labels = &test.labels()[start..end];
        let adversarial = fgsm_batch(model, &images, labels, epsilon)?;
        let predictions = model.predict_batch(&adversarial)?;
        Ok(predictions.iter().zip(labels).filter(|(p, &l)| p.class() == l).count())
    })?;
    Ok(correct.iter().sum::<usize>() as f64 / test.len() as f64)
}

fn robustness(config: &ExperimentConfig, before: &Model, after: &Model, test: &LabeledDataset) -> Result<Robustness> {
    let epsilon = config.adversarial_training.epsilon;
    Ok(Robustness {
        epsilon,
        clean_accuracy_before: before.accuracy(test)?,
        clean_accuracy_after: after.accuracy(test)?,
        fgsm_accuracy_before: fgsm_accuracy(before, test, epsilon)?,
        fgsm_accuracy_after: fgsm_accuracy(after, test, epsilon)?,
    })
}

fn correctly_classified(model: &Model, data: &LabeledDataset) -> Result<Vec<Tensor<f32>>> {
    let predictions = model.predict_batch(data.images())?;
    Ok(predictions
        .iter()
        .zip(data.images().iter().zip(data.labels()))
        .filter(|(p, (_, &l))| p.class() == l)
        .map(|(_, (x, _))| x.clone())
        .collect())
}

fn black_box(config: &ExperimentConfig, detector: &Detector, data: &Data, sets: &[NamedSet]) -> Result<BlackBox> {
    let model = detector.model();
    let distortions = &detector.stats().distortions;
    let calibration = correctly_classified(model, &data.validation)?;
    let held_out = correctly_classified(model, &data.test)?;
    if calibration.is_empty() || held_out.is_empty() {
        return Err(invalid("the victim classifies no validation or test sample correctly"));
    }
    let fpr = config.target_fpr;

    let projection = |images: &[Tensor<f32>]| -> Result<Vec<f64>> {
        Ok(detector.score_batch(images)?.into_iter().map(|s| s.1).collect())
    };
    let squeeze = |images: &[Tensor<f32>]| fs_scores(model, images, distortions);

    let row = |score: &dyn Fn(&[Tensor<f32>]) -> Result<Vec<f64>>, orientation| -> Result<ThresholdRow> {
        let threshold = calibrate_threshold(&score(&calibration)?, fpr, orientation)?;
        let rejected = |scores: &[f64]| {
            scores.iter().filter(|&&s| is_rejected(s, threshold, orientation)).count() as f64 / scores.len() as f64
        };
        let mut detection = Vec::new();
        for s in sets {
            let images: Vec<Tensor<f32>> = s.set.results.iter().map(|r| r.adversarial.clone()).collect();
            let rate = if images.is_empty() {
                None
            } else {
                Some(rejected(&score(&images)?))
            };
            detection.push(DetectionRate {
                attack: s.name.clone(),
                samples: images.len(),
                rate,
            });
        }
        Ok(ThresholdRow {
            threshold,
            held_out_rejection: rejected(&score(&held_out)?),
            detection,
        })
    };

    Ok(BlackBox {
        target_fpr: fpr,
        calibration_samples: calibration.len(),
        held_out_samples: held_out.len(),
        ours: row(&projection, Orientation::HigherIsLegitimate)?,
        fs: row(&squeeze, Orientation::HigherIsAdversarial)?,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortions::Distortion;

    #[test]
    fn ablation_covers_singles_and_prefixes() {
        let labels: Vec<String> = ablation_sets(&DistortionSet::three()).iter().map(|s| s.label()).collect();
        assert_eq!(
            labels,
            [
                "median3",
                "bitdepth5",
                "grayscale",
                "median3+bitdepth5",
                "median3+bitdepth5+grayscale"
            ]
        );
        assert_eq!(ablation_sets(&DistortionSet::single(Distortion::Grayscale)).len(), 1);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(Vec::new()).is_nan());
    }

    #[test]
    fn layout_paths() {
        let l = RunLayout::new("run");
        assert_eq!(l.dataset(Split::Validation), Path::new("run/data/validation.advt"));
        assert_eq!(l.attack_set(TRANSFER, "cw0"), Path::new("run/attacks/transfer-cw0.advt"));
        assert_eq!(l.statistics(HARDENED), Path::new("run/stats/hardened.advs"));
    }
}
