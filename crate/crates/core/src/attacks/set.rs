use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackResult};
use crate::classifier::{Fingerprint, LabeledDataset, Model, Split};
use crate::error::{invalid, Error, Result};
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackSetting {
    /// Crafted on the victim itself.
    WhiteBox,
    /// Crafted on a substitute and transferred to the victim.
    BlackBox,
}

/// Successful adversarial examples for one attack configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackSet {
    pub config: AttackConfig,
    pub setting: AttackSetting,
    pub crafting: Fingerprint,
    pub victim: Fingerprint,
    /// Number of samples that were attacked.
    pub attempted: usize,
    /// Retained results; each `source_index` points into the attacked dataset.
    pub results: Vec<AttackResult>,
    /// Ground-truth label of each retained sample.
    pub labels: Vec<usize>,
}

impl AttackSet {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Fraction of attacked samples that fooled the victim.
    pub fn success_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.len() as f64 / self.attempted as f64
        }
    }

    pub fn mean_l2(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.results.iter().map(|r| r.l2).sum::<f64>() / self.len() as f64)
    }

    /// Errors with [`Error::EmptyAttackSet`] when nothing was retained.
    pub fn require_nonempty(&self) -> Result<&Self> {
        if self.is_empty() {
            return Err(Error::EmptyAttackSet(format!(
                "{:?} {:?} attack fooled none of {} attempted samples",
                self.setting, self.config.kind, self.attempted
            )));
        }
        Ok(self)
    }
}

/// Attacks every test sample that both `crafting` and `victim` classify
/// correctly (at most `limit` of them, in dataset order) and keeps the
/// attacks that change the victim's prediction.
///
/// Passing the same model twice gives a white-box set; a substitute as
/// `crafting` gives a black-box (transfer) set.
pub fn build_attack_set(
    crafting: &Model,
    dataset: &LabeledDataset,
    config: &AttackConfig,
    victim: &Model,
    limit: Option<usize>,
) -> Result<AttackSet> {
    config.validate()?;
    if dataset.split() != Split::Test {
        return Err(invalid("attack sets are built from the test split"));
    }
    if crafting.input_shape() != victim.input_shape() || crafting.n_classes() != victim.n_classes() {
        return Err(invalid("crafting and victim models disagree on input shape or classes"));
    }
    let crafting_pred = crafting.predict_batch(dataset.images())?;
    let white_box = crafting.fingerprint() == victim.fingerprint();
    let victim_pred = if white_box {
        crafting_pred.clone()
    } else {
        victim.predict_batch(dataset.images())?
    };
    let mut candidates: Vec<usize> = (0..dataset.len())
        .filter(|&i| {
            let l = dataset.labels()[i];
            crafting_pred[i].class() == l && victim_pred[i].class() == l
        })
        .collect();
    if let Some(limit) = limit {
        candidates.truncate(limit);
    }

    let outcomes = exec::try_map(&candidates, |_, &i| -> Result<Option<AttackResult>> {
        let label = dataset.labels()[i];
        let mut result = config.run(crafting, &dataset.images()[i], Some(label))?;
        result.source_index = i;
        if !white_box {
            result.success = victim.predict(&result.adversarial)?.class() != label;
        }
        Ok(result.success.then_some(result))
    })?;

    let results: Vec<AttackResult> = outcomes.into_iter().flatten().collect();
    let labels = results.iter().map(|r| dataset.labels()[r.source_index]).collect();
    Ok(AttackSet {
        config: config.clone(),
        setting: if white_box {
            AttackSetting::WhiteBox
        } else {
            AttackSetting::BlackBox
        },
        crafting: crafting.fingerprint(),
        victim: victim.fingerprint(),
        attempted: candidates.len(),
        results,
        labels,
    })
}
