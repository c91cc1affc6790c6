use std::fs;

use advsig::attacks::{build_attack_set, AttackConfig};
use advsig::classifier::{train, Checkpoint, Model, ModelConfig, Split, TrainConfig};
use advsig::detector::{compute_class_statistics, Detector};
use advsig::distortions::DistortionSet;
use advsig::io::*;
use advsig::{Error, Tensor};
use proptest::prelude::*;

struct Fixture {
    checkpoint: Checkpoint,
    other: Model,
}

fn fixture() -> (Fixture, advsig::classifier::LabeledDataset, advsig::classifier::LabeledDataset) {
    let train_set = generate_synthetic_dataset(3, 10, 8, 1, Split::Train).unwrap();
    let test_set = generate_synthetic_dataset(3, 6, 8, 2, Split::Test).unwrap();
    let schedule = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let checkpoint = train(&Model::init(ModelConfig::reference([8, 8, 3], 3, 1)).unwrap(), &train_set, &schedule).unwrap();
    let other = Model::init(ModelConfig::reference([8, 8, 3], 3, 2)).unwrap();
    (Fixture { checkpoint, other }, train_set, test_set)
}

/// Saves, loads and saves again; both files must match byte for byte.
fn round_trip<T>(name: &str, value: &T, save: impl Fn(&std::path::Path, &T) -> advsig::Result<()>, load: impl Fn(&std::path::Path) -> advsig::Result<T>) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join(format!("{name}.1")), dir.path().join(format!("{name}.2")));
    save(&a, value).unwrap();
    let loaded = load(&a).unwrap();
    save(&b, &loaded).unwrap();
    let (bytes, again) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    if let Some(i) = bytes.iter().zip(&again).position(|(x, y)| x != y).or((bytes.len() != again.len()).then_some(bytes.len().min(again.len()))) {
        let window = |v: &[u8]| String::from_utf8_lossy(&v[i.saturating_sub(40)..(i + 40).min(v.len())]).into_owned();
        panic!("{name}: first difference at byte {i}:\n{}\n{}", window(&bytes), window(&again));
    }
    bytes
}

fn every_truncation_fails<T: std::fmt::Debug>(bytes: &[u8], parse: impl Fn(&[u8]) -> advsig::Result<T>) {
    for len in 0..bytes.len() {
        match parse(&bytes[..len]) {
            Err(Error::Truncated { .. } | Error::Format { .. }) => {}
            other => panic!("prefix of {len} bytes: {other:?}"),
        }
    }
}

#[test]
fn formats_round_trip_byte_for_byte_and_reject_truncation() {
    let (f, train_set, test_set) = fixture();
    let model = &f.checkpoint.model;
    let stats = compute_class_statistics(model, &train_set, &DistortionSet::three()).unwrap();
    let attacks = build_attack_set(model, &test_set, &AttackConfig::fgsm(0.3), model, None).unwrap();
    assert!(!attacks.is_empty());

    let data = round_trip("data", &test_set, |p, d| save_dataset(p, d), |p| load_dataset(p, Split::Test));
    every_truncation_fails(&data, TensorContainer::from_bytes);

    let ckpt = round_trip("ckpt", &f.checkpoint, |p, c| save_checkpoint(p, c), |p| load_checkpoint(p));
    every_truncation_fails(&ckpt, checkpoint_from_bytes);
    assert_eq!(checkpoint_from_bytes(&ckpt).unwrap().model.fingerprint(), model.fingerprint());

    let st = round_trip("stats", &stats, |p, s| save_statistics(p, s), |p| load_statistics(p));
    every_truncation_fails(&st, statistics_from_bytes);
    assert_eq!(statistics_from_bytes(&st).unwrap(), stats);

    let atk = round_trip("attacks", &attacks, |p, a| save_attack_set(p, a, 3), |p| load_attack_set(p));
    every_truncation_fails(&atk, TensorContainer::from_bytes);
    let back = attack_set_from_container(TensorContainer::from_bytes(&atk).unwrap()).unwrap();
    assert_eq!(back.results, attacks.results);
    assert_eq!(back.labels, attacks.labels);
}

#[test]
fn trailing_bytes_and_bad_magic_are_rejected() {
    let (f, _, test_set) = fixture();
    let mut bytes = checkpoint_to_bytes(&f.checkpoint).unwrap();
    bytes.push(0);
    assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::Format { .. })));
    let mut data = dataset_to_container(&test_set).to_bytes().unwrap();
    data[0] = b'X';
    assert!(matches!(TensorContainer::from_bytes(&data), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn detector_refuses_statistics_of_another_model() {
    let (f, train_set, _) = fixture();
    let stats = compute_class_statistics(&f.checkpoint.model, &train_set, &DistortionSet::three()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.advs");
    save_statistics(&path, &stats).unwrap();
    let loaded = load_statistics(&path).unwrap();
    assert!(Detector::new(f.checkpoint.model.clone(), loaded.clone()).is_ok());
    assert!(matches!(Detector::new(f.other, loaded), Err(Error::FingerprintMismatch { .. })));
}

proptest! {
    #[test]
    fn containers_round_trip(
        records in prop::collection::vec(
            (prop::collection::vec(-2.0f32..2.0, 1..24), prop::option::of(0usize..5), prop::option::of("[a-z ]{0,12}")),
            0..8,
        )
    ) {
        let container = TensorContainer {
            n_classes: 5,
            records: records
                .into_iter()
                .map(|(values, label, meta)| Record {
                    tensor: Tensor::new(vec![values.len()], values).unwrap(),
                    label,
                    meta,
                })
                .collect(),
        };
        let bytes = container.to_bytes().unwrap();
        let back = TensorContainer::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &container);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
