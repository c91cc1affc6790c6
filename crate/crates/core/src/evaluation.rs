//! Detector evaluation: paired legitimate/adversarial sets, ROC curves,
//! AUC, detection rates at a fixed threshold and score histograms.
//!
//! Scores are legitimacy scores: higher means more likely legitimate, and a
//! sample is flagged as adversarial when its score is below the threshold.
//! The positive class of every ROC curve is "adversarial".

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackSet;
use crate::classifier::{LabeledDataset, Model};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Legitimate,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: usize,
    pub score: f64,
    pub truth: Truth,
    pub class: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    samples: Vec<ScoredSample>,
}

impl ScoredSet {
    pub fn new(samples: Vec<ScoredSample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
            return Err(invalid(format!("sample {} has a non-finite score", s.id)));
        }
        Ok(Self { samples })
    }

    /// Legitimate samples first, ids numbered consecutively; classes unknown (0).
    pub fn from_scores(legitimate: &[f64], adversarial: &[f64]) -> Result<Self> {
        let tagged = legitimate
            .iter()
            .map(|&s| (s, Truth::Legitimate))
            .chain(adversarial.iter().map(|&s| (s, Truth::Adversarial)));
        Self::new(
            tagged
                .enumerate()
                .map(|(id, (score, truth))| ScoredSample {
                    id,
                    score,
                    truth,
                    class: 0,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[ScoredSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scores(&self, truth: Truth) -> Vec<f64> {
        self.samples.iter().filter(|s| s.truth == truth).map(|s| s.score).collect()
    }

    /// `(legitimate, adversarial)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let adv = self.samples.iter().filter(|s| s.truth == Truth::Adversarial).count();
        (self.samples.len() - adv, adv)
    }

    /// The same scores with every truth tag flipped.
    pub fn swapped(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| ScoredSample {
                truth: match s.truth {
                    Truth::Legitimate => Truth::Adversarial,
                    Truth::Adversarial => Truth::Legitimate,
                },
                ..*s
            })
            .collect();
        Self { samples }
    }
}

/// Legitimate test samples paired one-to-one with an attack set.
#[derive(Clone, Debug)]
pub struct PairedSets {
    /// Indices into the test set, ascending.
    pub legitimate_indices: Vec<usize>,
    pub legitimate: Vec<Tensor<f32>>,
    pub adversarial: Vec<Tensor<f32>>,
}

/// Draws as many correctly predicted test samples as there are adversarial
/// examples, by seeded sampling without replacement.
pub fn pair_sets(attack_set: &AttackSet, test_set: &LabeledDataset, model: &Model, seed: u64) -> Result<PairedSets> {
    attack_set.require_nonempty()?;
    let k = attack_set.len();
    let predictions = model.predict_batch(test_set.images())?;
    let correct: Vec<usize> = predictions
        .iter()
        .zip(test_set.labels())
        .enumerate()
        .filter(|(_, (p, &l))| p.class() == l)
        .map(|(i, _)| i)
        .collect();
    if correct.len() < k {
        return Err(Error::InsufficientSamples {
            needed: k,
            available: correct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, correct.len(), k)
        .into_iter()
        .map(|i| correct[i])
        .collect();
    chosen.sort_unstable();
    Ok(PairedSets {
        legitimate: chosen.iter().map(|&i| test_set.images()[i].clone()).collect(),
        legitimate_indices: chosen,
        adversarial: attack_set.results.iter().map(|r| r.adversarial.clone()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring strictly below this value are flagged.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// `fpr,tpr,threshold` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).expect("writing to a string");
        }
        out
    }
}

/// Empirical ROC curve, sweeping the threshold over the distinct scores.
/// Tied scores move together, so each distinct score adds one point.
pub fn roc_curve(set: &ScoredSet) -> Result<RocCurve> {
    let (n_legit, n_adv) = set.counts();
    if n_legit == 0 || n_adv == 0 {
        return Err(Error::SingleClass {
            legitimate: n_legit,
            adversarial: n_adv,
        });
    }
    let mut sorted: Vec<&ScoredSample> = set.samples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: sorted[0].score,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            match sorted[i].truth {
                Truth::Legitimate => fp += 1,
                Truth::Adversarial => tp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_legit as f64,
            tpr: tp as f64 / n_adv as f64,
            threshold: sorted.get(i).map_or(f64::INFINITY, |s| s.score),
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(roc: &RocCurve) -> f64 {
    roc.points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// `(legitimate pass rate, adversarial detection rate)` at `threshold`.
/// A class absent from the set reports a rate of 0.
pub fn detection_rate(set: &ScoredSet, threshold: f64) -> (f64, f64) {
    let rate = |truth: Truth, hit: fn(f64, f64) -> bool| {
        let scores = set.scores(truth);
        if scores.is_empty() {
            return 0.0;
        }
        scores.iter().filter(|&&s| hit(s, threshold)).count() as f64 / scores.len() as f64
    };
    (rate(Truth::Legitimate, |s, t| s >= t), rate(Truth::Adversarial, |s, t| s < t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    pub legitimate: Vec<usize>,
    pub adversarial: Vec<usize>,
}

impl Histogram {
    /// `bin_lo,bin_hi,legitimate,adversarial` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,legitimate,adversarial\n");
        for (b, (l, a)) in self.legitimate.iter().zip(&self.adversarial).enumerate() {
            writeln!(out, "{},{},{l},{a}", self.edges[b], self.edges[b + 1]).expect("writing to a string");
        }
        out
    }
}

/// Equal-width histogram of the scores over `[0, 1]`. Bins are half-open
/// except the last, which also holds 1.0; out-of-range scores go to the
/// nearest end bin.
pub fn export_histogram(set: &ScoredSet, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(invalid(format!("a histogram needs at least 2 bins, got {bins}")));
    }
    let edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut legitimate = vec![0; bins];
    let mut adversarial = vec![0; bins];
    for s in &set.samples {
        let b = ((s.score * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        match s.truth {
            Truth::Legitimate => legitimate[b] += 1,
            Truth::Adversarial => adversarial[b] += 1,
        }
    }
    Ok(Histogram {
        edges,
        legitimate,
        adversarial,
    })
}
