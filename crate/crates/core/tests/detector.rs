use advsig::classifier::{Model, ModelConfig, Split};
use advsig::detector::*;
use advsig::distortions::{Distortion, DistortionSet};
use advsig::io::generate_synthetic_dataset;
use advsig::Tensor;
use proptest::prelude::*;

fn model() -> Model {
    Model::init(ModelConfig::reference([8, 8, 3], 4, 3)).unwrap()
}

fn image() -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(0.0f32..=1.0, 8 * 8 * 3).prop_map(|d| Tensor::new(vec![8, 8, 3], d).unwrap())
}

fn distortion_sets() -> impl Strategy<Value = DistortionSet> {
    prop::sample::subsequence(
        vec![Distortion::DEFAULT_MEDIAN, Distortion::DEFAULT_BIT_DEPTH, Distortion::Grayscale],
        1..=3,
    )
    .prop_map(|d| DistortionSet::new(d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn signature_blocks_are_distributions(x in image(), set in distortion_sets()) {
        let m = model();
        let sig = build_signature(&m, &x, &set).unwrap();
        prop_assert_eq!(sig.len(), 4 * set.len());
        for block in sig.values().chunks(4) {
            prop_assert!(block.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((block.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn projection_is_a_bounded_scale_free_cosine(
        sig in prop::collection::vec(0.0f32..1.0, 1..24),
        scale in 0.1f32..10.0,
        seed in 0u32..1000,
    ) {
        let mu: Vec<f32> = sig.iter().enumerate().map(|(i, v)| (v + (i as u32 * 7 + seed) as f32 % 5.0) / 6.0).collect();
        let s = projection_score(&sig, &mu).unwrap();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&s));
        let scaled: Vec<f32> = sig.iter().map(|v| v * scale).collect();
        prop_assert!((projection_score(&scaled, &mu).unwrap() - s).abs() < 1e-5);
        if sig.iter().any(|&v| v > 0.0) {
            prop_assert!((projection_score(&sig, &sig).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fs_score_stays_within_two(x in image(), set in distortion_sets()) {
        let s = fs_score(&model(), &x, &set).unwrap();
        prop_assert!((0.0..=2.0 + 1e-6).contains(&s));
        prop_assert!((0.0 - 1e-6..=1.0).contains(&fs_legitimacy(s)));
    }
}

#[test]
fn verdicts_follow_the_threshold() {
    let m = model();
    let train = generate_synthetic_dataset(4, 8, 8, 1, Split::Train).unwrap();
    let stats = compute_class_statistics(&m, &train, &DistortionSet::three()).unwrap();
    let detector = Detector::new(m, stats).unwrap();
    for x in train.images().iter().take(10) {
        let (class, score) = detector.score(x).unwrap();
        for threshold in [0.0, score, score + 1e-9, 1.0] {
            let v = detector.detect(x, threshold).unwrap();
            assert_eq!(v.class, class);
            let rejected = is_rejected(score, threshold, Orientation::HigherIsLegitimate);
            assert_eq!(v.decision == Decision::Adversarial, rejected, "threshold {threshold}");
        }
    }
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_signatures_agree() {
    let m = model();
    let data = generate_synthetic_dataset(4, 16, 8, 5, Split::Test).unwrap();
    let set = DistortionSet::three();
    let seq = advsig::exec::seq_map(data.images(), |_, x| build_signature(&m, x, &set).unwrap());
    let par = advsig::exec::par_map(data.images(), |_, x| build_signature(&m, x, &set).unwrap());
    assert_eq!(seq, par);
    assert_eq!(build_signatures(&m, data.images(), &set).unwrap(), seq);
}
