//! `ADVT` tensor container.
//!
//! ```text
//! "ADVT" | version u16 | n_classes u16 | record count u64
//! per record:
//!   flags u8 (bit 0: label present, bit 1: metadata present)
//!   rank u8 | dims u32 × rank | f32 payload
//!   [label u16] [metadata: u32 length + UTF-8]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackResult, AttackSet, AttackSetting};
use crate::classifier::{Fingerprint, LabeledDataset, Split};
use crate::error::{invalid, Error, Result};
use crate::io::{read_shape, write_atomic, write_shape, Reader, Writer};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ADVT";
const VERSION: u16 = 1;
const HAS_LABEL: u8 = 1;
const HAS_META: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub tensor: Tensor<f32>,
    pub label: Option<usize>,
    pub meta: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorContainer {
    pub n_classes: usize,
    pub records: Vec<Record>,
}

impl TensorContainer {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n_classes =
            u16::try_from(self.n_classes).map_err(|_| invalid("the container holds at most 65535 classes"))?;
        let mut w = Writer::new(MAGIC, VERSION);
        w.u16(n_classes);
        w.u64(self.records.len() as u64);
        for (i, rec) in self.records.iter().enumerate() {
            let mut flags = 0;
            if rec.label.is_some() {
                flags |= HAS_LABEL;
            }
            if rec.meta.is_some() {
                flags |= HAS_META;
            }
            w.u8(flags);
            write_shape(&mut w, rec.tensor.shape())?;
            w.f32s(rec.tensor.data());
            if let Some(label) = rec.label {
                if label >= self.n_classes {
                    return Err(invalid(format!("record {i} has label {label} but only {n_classes} classes")));
                }
                w.u16(label as u16);
            }
            if let Some(meta) = &rec.meta {
                w.blob(meta.as_bytes())?;
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let n_classes = r.u16()? as usize;
        let count = r.u64()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let at = r.offset();
            let flags = r.u8()?;
            if flags & !(HAS_LABEL | HAS_META) != 0 {
                return Err(r.fail(at, format!("unknown record flags {flags:#04x}")));
            }
            let shape = read_shape(&mut r)?;
            let data = r.f32s(shape.iter().product())?;
            let tensor = Tensor::new(shape, data)?;
            let label = if flags & HAS_LABEL != 0 {
                let label_at = r.offset();
                let label = r.u16()? as usize;
                if label >= n_classes {
                    return Err(r.fail(label_at, format!("label {label} not below {n_classes} classes")));
                }
                Some(label)
            } else {
                None
            };
            let meta = if flags & HAS_META != 0 {
                let meta_at = r.offset();
                let raw = r.blob()?;
                Some(
                    String::from_utf8(raw.to_vec())
                        .map_err(|_| r.fail(meta_at, "metadata is not valid UTF-8"))?,
                )
            } else {
                None
            };
            records.push(Record { tensor, label, meta });
        }
        r.finish()?;
        Ok(Self { n_classes, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn dataset_to_container(dataset: &LabeledDataset) -> TensorContainer {
    TensorContainer {
        n_classes: dataset.n_classes(),
        records: dataset
            .images()
            .iter()
            .zip(dataset.labels())
            .map(|(im, &l)| Record {
                tensor: im.clone(),
                label: Some(l),
                meta: None,
            })
            .collect(),
    }
}

/// Every record must carry a label; the split is not stored in the file.
pub fn dataset_from_container(container: TensorContainer, split: Split) -> Result<LabeledDataset> {
    let mut images = Vec::with_capacity(container.records.len());
    let mut labels = Vec::with_capacity(container.records.len());
    for (i, rec) in container.records.into_iter().enumerate() {
        labels.push(rec.label.ok_or_else(|| invalid(format!("record {i} has no label")))?);
        images.push(rec.tensor);
    }
    LabeledDataset::new(images, labels, container.n_classes, split)
}

pub fn save_dataset(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    dataset_to_container(dataset).save(path)
}

pub fn load_dataset(path: &Path, split: Split) -> Result<LabeledDataset> {
    dataset_from_container(TensorContainer::load(path)?, split)
}

#[derive(Serialize, Deserialize)]
struct SetHeader {
    config: AttackConfig,
    setting: AttackSetting,
    crafting: String,
    victim: String,
    attempted: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    source_index: usize,
    success: bool,
    iterations: usize,
    l2: f64,
}

/// Layout: one descriptor record (a single zero whose metadata describes the
/// set), then per sample the adversarial image (label and metadata) followed
/// by its perturbation.
pub fn attack_set_to_container(set: &AttackSet, n_classes: usize) -> Result<TensorContainer> {
    let header = SetHeader {
        config: set.config.clone(),
        setting: set.setting,
        crafting: set.crafting.to_string(),
        victim: set.victim.to_string(),
        attempted: set.attempted,
    };
    let mut records = vec![Record {
        tensor: Tensor::zeros(&[1]),
        label: None,
        meta: Some(serde_json::to_string(&header)?),
    }];
    for (r, &label) in set.results.iter().zip(&set.labels) {
        let meta = SampleMeta {
            source_index: r.source_index,
            success: r.success,
            iterations: r.iterations,
            l2: r.l2,
        };
        records.push(Record {
            tensor: r.adversarial.clone(),
            label: Some(label),
            meta: Some(serde_json::to_string(&meta)?),
        });
        records.push(Record {
            tensor: r.perturbation.clone(),
            label: None,
            meta: None,
        });
    }
    Ok(TensorContainer { n_classes, records })
}

pub fn attack_set_from_container(container: TensorContainer) -> Result<AttackSet> {
    let mut records = container.records.into_iter();
    let header: SetHeader = match records.next() {
        Some(Record { meta: Some(m), .. }) => serde_json::from_str(&m)?,
        _ => return Err(invalid("attack set container lacks its descriptor record")),
    };
    let mut results = Vec::new();
    let mut labels = Vec::new();
    while let Some(adv) = records.next() {
        let i = results.len();
        let eta = records
            .next()
            .ok_or_else(|| invalid(format!("sample {i} has no perturbation record")))?;
        let (Some(label), Some(meta)) = (adv.label, adv.meta) else {
            return Err(invalid(format!("sample {i} lacks its label or metadata")));
        };
        let meta: SampleMeta = serde_json::from_str(&meta)?;
        if adv.tensor.shape() != eta.tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "attack set record",
                left: adv.tensor.shape().to_vec(),
                right: eta.tensor.shape().to_vec(),
            });
        }
        labels.push(label);
        results.push(AttackResult {
            adversarial: adv.tensor,
            perturbation: eta.tensor,
            source_index: meta.source_index,
            success: meta.success,
            iterations: meta.iterations,
            l2: meta.l2,
        });
    }
    Ok(AttackSet {
        config: header.config,
        setting: header.setting,
        crafting: parse_fingerprint(&header.crafting)?,
        victim: parse_fingerprint(&header.victim)?,
        attempted: header.attempted,
        results,
        labels,
    })
}

pub fn save_attack_set(path: &Path, set: &AttackSet, n_classes: usize) -> Result<()> {
    attack_set_to_container(set, n_classes)?.save(path)
}

pub fn load_attack_set(path: &Path) -> Result<AttackSet> {
    attack_set_from_container(TensorContainer::load(path)?)
}

fn parse_fingerprint(hex: &str) -> Result<Fingerprint> {
    let bad = || invalid(format!("malformed fingerprint {hex:?}"));
    if hex.len() != 64 || !hex.is_ascii() {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(Fingerprint(out))
}
