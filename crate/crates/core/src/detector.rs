//! Signature-based detection and the Feature Squeezing baseline.
//!
//! A signature is the concatenation of the classifier's probability vectors
//! on the distorted replicas of an input. Per-class mean signatures come
//! from the training set; an input is scored by the cosine similarity
//! between its signature and the mean of its predicted class.

use serde::{Deserialize, Serialize};

use crate::classifier::{Fingerprint, LabeledDataset, Model, PredictionVector, Split};
use crate::distortions::DistortionSet;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::tensor::Tensor;

/// Concatenated probability vectors `[f(ψ_1(x)) | … | f(ψ_m(x))]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature(Vec<f32>);

impl Signature {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Signature of one image: one model query per distortion.
pub fn build_signature(model: &Model, image: &Tensor<f32>, distortions: &DistortionSet) -> Result<Signature> {
    Ok(build_signatures(model, std::slice::from_ref(image), distortions)?.remove(0))
}

/// Signatures for many images. Distortions and queries run in parallel;
/// the output is identical to calling [`build_signature`] per image.
pub fn build_signatures(model: &Model, images: &[Tensor<f32>], distortions: &DistortionSet) -> Result<Vec<Signature>> {
    let replicas = exec::try_map(images, |_, im| distortions.apply_set(im))?;
    let n = model.n_classes();
    let mut signatures: Vec<Vec<f32>> = vec![Vec::with_capacity(n * distortions.len()); images.len()];
    for i in 0..distortions.len() {
        let column: Vec<Tensor<f32>> = replicas.iter().map(|r| r[i].clone()).collect();
        for (sig, p) in signatures.iter_mut().zip(model.predict_batch(&column)?) {
            sig.extend_from_slice(p.probs());
        }
    }
    Ok(signatures.into_iter().map(Signature).collect())
}

/// Which training samples contribute to a class mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    /// Every sample, grouped by ground-truth label.
    #[default]
    GroundTruth,
    /// Only samples the model classifies correctly.
    CorrectOnly,
}

/// Per-class mean signatures, tied to a model and a distortion set.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStatistics {
    pub mu: Vec<Vec<f32>>,
    pub counts: Vec<u64>,
    pub distortions: DistortionSet,
    pub fingerprint: Fingerprint,
}

impl ClassStatistics {
    pub fn n_classes(&self) -> usize {
        self.mu.len()
    }

    /// Checks the structural invariants; used after loading from disk.
    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        let len = n * self.distortions.len();
        if n == 0 || self.counts.len() != n {
            return Err(invalid("statistics need one count per class mean"));
        }
        for (j, (mu, &count)) in self.mu.iter().zip(&self.counts).enumerate() {
            if count == 0 {
                return Err(Error::EmptyClass(j));
            }
            if mu.len() != len {
                return Err(invalid(format!("class mean {j} has length {}, expected {len}", mu.len())));
            }
            if mu.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(format!("class mean {j} has negative or non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Mean training signature of every class, grouped by ground-truth label.
pub fn compute_class_statistics(
    model: &Model,
    trainset: &LabeledDataset,
    distortions: &DistortionSet,
) -> Result<ClassStatistics> {
    compute_class_statistics_with(model, trainset, distortions, Membership::GroundTruth)
}

pub fn compute_class_statistics_with(
    model: &Model,
    trainset: &LabeledDataset,
    distortions: &DistortionSet,
    membership: Membership,
) -> Result<ClassStatistics> {
    if trainset.split() != Split::Train {
        return Err(invalid("class statistics are computed on the train split"));
    }
    let n = model.n_classes();
    if trainset.n_classes() != n {
        return Err(invalid(format!(
            "dataset has {} classes, model has {n}",
            trainset.n_classes()
        )));
    }
    let signatures = build_signatures(model, trainset.images(), distortions)?;
    let keep: Vec<bool> = match membership {
        Membership::GroundTruth => vec![true; trainset.len()],
        Membership::CorrectOnly => model
            .predict_batch(trainset.images())?
            .iter()
            .zip(trainset.labels())
            .map(|(p, &l)| p.class() == l)
            .collect(),
    };

    let len = n * distortions.len();
    let mut sums = vec![vec![0.0f64; len]; n];
    let mut counts = vec![0u64; n];
    for ((sig, &label), _) in signatures.iter().zip(trainset.labels()).zip(&keep).filter(|(_, &k)| k) {
        counts[label] += 1;
        for (s, &v) in sums[label].iter_mut().zip(sig.values()) {
            *s += v as f64;
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(j));
    }
    let mu = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| (v / c as f64) as f32).collect())
        .collect();
    Ok(ClassStatistics {
        mu,
        counts,
        distortions: distortions.clone(),
        fingerprint: model.fingerprint(),
    })
}

/// Cosine similarity between a signature and a class mean.
pub fn projection_score(signature: &[f32], mu: &[f32]) -> Result<f64> {
    if signature.len() != mu.len() {
        return Err(Error::ShapeMismatch {
            op: "projection_score",
            left: vec![signature.len()],
            right: vec![mu.len()],
        });
    }
    let (mut dot, mut a2, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in signature.iter().zip(mu) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        a2 += a * a;
        b2 += b * b;
    }
    if a2 == 0.0 || b2 == 0.0 || !(a2.is_finite() && b2.is_finite()) {
        return Err(invalid("projection score needs finite vectors of positive norm"));
    }
    Ok((dot / (a2.sqrt() * b2.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Legitimate,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    /// Class predicted on the undistorted input.
    pub class: usize,
    pub score: f64,
    pub threshold: f64,
    pub decision: Decision,
}

impl DetectionVerdict {
    pub fn new(class: usize, score: f64, threshold: f64) -> Self {
        let decision = if score >= threshold {
            Decision::Legitimate
        } else {
            Decision::Adversarial
        };
        Self {
            class,
            score,
            threshold,
            decision,
        }
    }
}

/// A model paired with statistics computed for it.
#[derive(Clone, Debug)]
pub struct Detector {
    model: Model,
    stats: ClassStatistics,
}

impl Detector {
    /// Fails with [`Error::FingerprintMismatch`] if `stats` belong to another model.
    pub fn new(model: Model, stats: ClassStatistics) -> Result<Self> {
        if stats.fingerprint != model.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: model.fingerprint().to_string(),
                found: stats.fingerprint.to_string(),
            });
        }
        if stats.n_classes() != model.n_classes() {
            return Err(invalid("statistics and model disagree on the number of classes"));
        }
        stats.validate()?;
        Ok(Self { model, stats })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn stats(&self) -> &ClassStatistics {
        &self.stats
    }

    /// Predicted class and projection score.
    pub fn score(&self, image: &Tensor<f32>) -> Result<(usize, f64)> {
        Ok(self.score_batch(std::slice::from_ref(image))?.remove(0))
    }

    pub fn score_batch(&self, images: &[Tensor<f32>]) -> Result<Vec<(usize, f64)>> {
        let predictions = self.model.predict_batch(images)?;
        let signatures = build_signatures(&self.model, images, &self.stats.distortions)?;
        predictions
            .iter()
            .zip(&signatures)
            .map(|(p, s)| {
                let j = p.class();
                Ok((j, projection_score(s.values(), &self.stats.mu[j])?))
            })
            .collect()
    }

    pub fn detect(&self, image: &Tensor<f32>, threshold: f64) -> Result<DetectionVerdict> {
        let (class, score) = self.score(image)?;
        Ok(DetectionVerdict::new(class, score, threshold))
    }
}

/// One-shot detection; checks that `stats` match `model`.
pub fn detect(model: &Model, stats: &ClassStatistics, image: &Tensor<f32>, threshold: f64) -> Result<DetectionVerdict> {
    Detector::new(model.clone(), stats.clone())?.detect(image, threshold)
}

/// Feature Squeezing score: the largest L1 distance between the prediction
/// on `image` and on any of its squeezed versions. In `[0, 2]`; higher is
/// more suspicious.
pub fn fs_score(model: &Model, image: &Tensor<f32>, distortions: &DistortionSet) -> Result<f64> {
    Ok(fs_scores(model, std::slice::from_ref(image), distortions)?.remove(0))
}

pub fn fs_scores(model: &Model, images: &[Tensor<f32>], distortions: &DistortionSet) -> Result<Vec<f64>> {
    let clean = model.predict_batch(images)?;
    let signatures = build_signatures(model, images, distortions)?;
    let n = model.n_classes();
    Ok(clean
        .iter()
        .zip(&signatures)
        .map(|(p, s)| {
            s.values()
                .chunks(n)
                .map(|block| l1(p, block))
                .fold(0.0, f64::max)
                .min(2.0)
        })
        .collect())
}

fn l1(p: &PredictionVector, q: &[f32]) -> f64 {
    p.probs().iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum()
}

/// Maps an FS score onto `[0, 1]` with higher meaning more legitimate.
pub fn fs_legitimacy(score: f64) -> f64 {
    (2.0 - score) / 2.0
}

/// Which side of the threshold counts as legitimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Reject scores below the threshold (projection and legitimacy scores).
    #[default]
    HigherIsLegitimate,
    /// Reject scores above the threshold (raw FS scores).
    HigherIsAdversarial,
}

/// Threshold that rejects at most `⌊target_fpr · N⌋` of the legitimate
/// scores: the largest such threshold for [`Orientation::HigherIsLegitimate`],
/// the smallest for [`Orientation::HigherIsAdversarial`].
pub fn calibrate_threshold(legitimate: &[f64], target_fpr: f64, orientation: Orientation) -> Result<f64> {
    if legitimate.is_empty() {
        return Err(invalid("cannot calibrate a threshold on no scores"));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(invalid(format!("target false-positive rate must be in (0, 1), got {target_fpr}")));
    }
    if legitimate.iter().any(|s| !s.is_finite()) {
        return Err(invalid("scores must be finite"));
    }
    let mut sorted = legitimate.to_vec();
    sorted.sort_by(f64::total_cmp);
    if orientation == Orientation::HigherIsAdversarial {
        sorted.reverse();
    }
    let k = (target_fpr * sorted.len() as f64 + 1e-9).floor() as usize;
    Ok(sorted[k.min(sorted.len() - 1)])
}

/// Whether `score` is rejected as adversarial at `threshold`.
pub fn is_rejected(score: f64, threshold: f64, orientation: Orientation) -> bool {
    match orientation {
        Orientation::HigherIsLegitimate => score < threshold,
        Orientation::HigherIsAdversarial => score > threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ModelConfig;
    use crate::distortions::Distortion;

    fn small_model() -> Model {
        Model::init(ModelConfig::reference([8, 8, 3], 3, 4)).unwrap()
    }

    fn image(seed: usize) -> Tensor<f32> {
        Tensor::from_fn(&[8, 8, 3], |i| ((i * 31 + seed * 17) % 29) as f32 / 28.0)
    }

    #[test]
    fn projection_examples() {
        let mu = [0.2f32, 0.5, 0.3];
        assert!((projection_score(&mu, &mu).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(projection_score(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((projection_score(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(projection_score(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(projection_score(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn quantized_image_signature_is_plain_prediction() {
        let model = small_model();
        let x = image(1).map(|v| (v * 31.0).round() / 31.0);
        let sig = build_signature(&model, &x, &DistortionSet::single(Distortion::BitDepth { bits: 5 })).unwrap();
        assert_eq!(sig.values(), model.predict(&x).unwrap().probs());
    }

    #[test]
    fn two_distortion_blocks_in_order() {
        let model = small_model();
        let x = image(2);
        let set = DistortionSet::two();
        let sig = build_signature(&model, &x, &set).unwrap();
        assert_eq!(sig.len(), 6);
        let first = model.predict(&set.as_slice()[0].apply(&x).unwrap()).unwrap();
        let second = model.predict(&set.as_slice()[1].apply(&x).unwrap()).unwrap();
        assert_eq!(&sig.values()[..3], first.probs());
        assert_eq!(&sig.values()[3..], second.probs());
        for block in sig.values().chunks(3) {
            assert!(block.iter().all(|&v| v >= 0.0));
            assert!((block.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    fn dataset(images: Vec<Tensor<f32>>, labels: Vec<usize>) -> LabeledDataset {
        LabeledDataset::new(images, labels, 3, Split::Train).unwrap()
    }

    #[test]
    fn statistics_means_and_errors() {
        let model = small_model();
        let set = DistortionSet::two();
        let imgs: Vec<_> = (0..6).map(image).collect();
        let data = dataset(imgs.clone(), vec![0, 1, 2, 1, 2, 2]);
        let stats = compute_class_statistics(&model, &data, &set).unwrap();
        assert_eq!(stats.counts, vec![1, 2, 3]);
        assert_eq!(stats.mu[0], build_signature(&model, &imgs[0], &set).unwrap().into_values());
        for mu in &stats.mu {
            for block in mu.chunks(3) {
                assert!((block.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let doubled = dataset(
            imgs.iter().chain(&imgs).cloned().collect(),
            vec![0, 1, 2, 1, 2, 2, 0, 1, 2, 1, 2, 2],
        );
        let again = compute_class_statistics(&model, &doubled, &set).unwrap();
        for (a, b) in again.mu.iter().flatten().zip(stats.mu.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(stats, compute_class_statistics(&model, &data, &set).unwrap());

        let missing = dataset(imgs[..2].to_vec(), vec![0, 1]);
        assert!(matches!(
            compute_class_statistics(&model, &missing, &set),
            Err(Error::EmptyClass(2))
        ));
        let test_split = data.clone().with_split(Split::Test);
        assert!(compute_class_statistics(&model, &test_split, &set).is_err());
    }

    #[test]
    fn detect_thresholds_and_fingerprints() {
        let model = small_model();
        let set = DistortionSet::two();
        let x = image(3);
        // Every class mean is the signature of x itself.
        let imgs = vec![x.clone(), x.clone(), x.clone()];
        let stats = compute_class_statistics(&model, &dataset(imgs, vec![0, 1, 2]), &set).unwrap();
        let v = detect(&model, &stats, &x, 1.0).unwrap();
        assert!((v.score - 1.0).abs() < 1e-9);
        assert_eq!(detect(&model, &stats, &x, 0.0).unwrap().decision, Decision::Legitimate);
        assert_eq!(detect(&model, &stats, &x, 1.5).unwrap().decision, Decision::Adversarial);

        let other = Model::init(ModelConfig::reference([8, 8, 3], 3, 5)).unwrap();
        assert!(matches!(
            detect(&other, &stats, &x, 0.5),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn fs_examples() {
        let model = small_model();
        let x = image(4).map(|v| (v * 31.0).round() / 31.0);
        let fixed = DistortionSet::single(Distortion::BitDepth { bits: 5 });
        assert_eq!(fs_score(&model, &x, &fixed).unwrap(), 0.0);
        let s = fs_score(&model, &image(5), &DistortionSet::three()).unwrap();
        assert!((0.0..=2.0).contains(&s));
        assert_eq!(fs_legitimacy(0.0), 1.0);
        assert_eq!(fs_legitimacy(2.0), 0.0);
    }

    #[test]
    fn calibration_examples() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let t = calibrate_threshold(&scores, 0.05, Orientation::HigherIsLegitimate).unwrap();
        assert_eq!(scores.iter().filter(|&&s| s < t).count(), 5);
        let t = calibrate_threshold(&scores, 0.005, Orientation::HigherIsLegitimate).unwrap();
        assert_eq!(scores.iter().filter(|&&s| s < t).count(), 0);
        let same = vec![0.7; 50];
        let t = calibrate_threshold(&same, 0.3, Orientation::HigherIsLegitimate).unwrap();
        assert_eq!(same.iter().filter(|&&s| s < t).count(), 0);
        let t = calibrate_threshold(&scores, 0.05, Orientation::HigherIsAdversarial).unwrap();
        assert_eq!(scores.iter().filter(|&&s| is_rejected(s, t, Orientation::HigherIsAdversarial)).count(), 5);
        assert!(calibrate_threshold(&[], 0.05, Orientation::HigherIsLegitimate).is_err());
        assert!(calibrate_threshold(&scores, 1.0, Orientation::HigherIsLegitimate).is_err());
    }
}
