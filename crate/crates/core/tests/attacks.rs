#[path = "support/toy.rs"]
mod toy;

use advsig::attacks::{
    apply_perturbation, build_attack_set, carlini_wagner, deepfool, fgsm, fgsm_from_gradient, AttackConfig,
    AttackSetting,
};
use advsig::classifier::{Model, ModelConfig, Split};
use advsig::io::generate_synthetic_dataset;
use advsig::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn deepfool_matches_the_affine_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 40 {
        let (d, k) = (rng.gen_range(2..=8), rng.gen_range(2..=5));
        let w: Vec<f64> = (0..d * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..0.7)).collect();
        let model = toy::affine(&w, &b, d, k);
        let image = Tensor::new(vec![1, d, 1], x.iter().map(|&v| v as f32).collect()).unwrap();

        let (eta, source) = toy::deepfool_closed_form(&model, &image, 0.02);
        let landed: Vec<f64> = x.iter().zip(&eta).map(|(a, e)| a + e).collect();
        if landed.iter().any(|v| !(0.0..=1.0).contains(v)) {
            continue;
        }
        let result = deepfool(&model, &image, Some(source), &AttackConfig::deepfool()).unwrap();
        assert!(result.success);
        assert_eq!(result.iterations, 1);
        for (got, want) in result.perturbation.data().iter().zip(&eta) {
            assert!((*got as f64 - want).abs() < 1e-6, "{got} vs {want}");
        }
        checked += 1;
    }
}

/// Random two-class affine models on two pixels, with starting points for
/// which the grid optimum has a nearby misclassified point.
fn two_pixel_cases(seed: u64, count: usize, keep: impl Fn([f32; 2]) -> bool) -> Vec<(Model, Tensor<f32>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    while cases.len() < count {
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let model = toy::affine(&w, &b, 2, 2);
        let x = [rng.gen_range(0.1..0.9f32), rng.gen_range(0.1..0.9f32)];
        let image = Tensor::new(vec![1, 2, 1], x.to_vec()).unwrap();
        let source = model.predict(&image).unwrap().class();
        match toy::grid_oracle(&model, x, source, 0.0, 400) {
            Some((d, p)) if d > 0.01 && keep(p) => cases.push((model, image, d)),
            _ => {}
        }
    }
    cases
}

#[test]
fn cw_is_close_to_the_grid_oracle() {
    let interior = |p: [f32; 2]| p.iter().all(|v| (0.05..=0.95).contains(v));
    for (i, (model, image, oracle)) in two_pixel_cases(7, 40, interior).iter().enumerate() {
        let r = carlini_wagner(model, image, None, 0.0, &AttackConfig::carlini_wagner(0.0)).unwrap();
        assert!(r.success, "case {i}");
        assert!((r.l2 - oracle).abs() <= 0.1 * oracle, "case {i}: {} vs {oracle}", r.l2);
    }
}

#[test]
fn cw_reaches_optima_on_the_box_edge_given_budget() {
    let edge = |p: [f32; 2]| p.iter().any(|v| !(0.05..=0.95).contains(v));
    let mut config = AttackConfig::carlini_wagner(0.0);
    config.cw.binary_search_steps = 9;
    config.max_iterations = 10_000;
    for (i, (model, image, oracle)) in two_pixel_cases(3, 8, edge).iter().enumerate() {
        let r = carlini_wagner(model, image, None, 0.0, &config).unwrap();
        assert!(r.success, "case {i}");
        assert!((r.l2 - oracle).abs() <= 0.1 * oracle, "case {i}: {} vs {oracle}", r.l2);
    }
}

#[test]
fn cw_confidence_buys_margin_at_the_cost_of_distance() {
    let model = toy::affine(&[5.0, -3.0, -2.0, 4.0], &[1.0, -0.5], 2, 2);
    let image = Tensor::new(vec![1, 2, 1], vec![0.6, 0.3]).unwrap();
    let mut previous = 0.0;
    for kappa in [0.0f32, 0.05, 0.1, 0.2] {
        let config = AttackConfig::carlini_wagner(kappa);
        let margin = kappa * config.cw.logit_scale;
        let r = carlini_wagner(&model, &image, Some(0), kappa, &config).unwrap();
        assert!(r.success);
        let z = model.logits(&r.adversarial).unwrap();
        assert!(z[1] - z[0] >= margin - 1e-4, "kappa {kappa}: margin {}", z[1] - z[0]);
        assert!(r.l2 >= previous, "kappa {kappa}: {} < {previous}", r.l2);
        let (oracle, _) = toy::grid_oracle(&model, [0.6, 0.3], 0, margin as f64, 400).unwrap();
        assert!((r.l2 - oracle).abs() <= 0.1 * oracle, "kappa {kappa}: {} vs {oracle}", r.l2);
        previous = r.l2;
    }
}

#[test]
fn fgsm_recomputes_bit_exactly_from_the_stored_gradient() {
    let model = Model::init(ModelConfig::reference([8, 8, 3], 4, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let x = Tensor::<f32>::from_fn(&[8, 8, 3], |_| rng.gen_range(0.0..1.0));
        let label = rng.gen_range(0..4);
        let eps = rng.gen_range(0.01..0.2f32);
        let result = fgsm(&model, &x, Some(label), eps).unwrap();
        let grad = model.input_gradient(&x, label).unwrap();
        let expected: Vec<f32> = grad
            .data()
            .iter()
            .map(|&g| if g > 0.0 { eps } else if g < 0.0 { -eps } else { 0.0 })
            .collect();
        assert_eq!(result.perturbation.data(), &expected[..]);
        let (eta, adv) = fgsm_from_gradient(&x, &grad, eps);
        assert_eq!(eta, result.perturbation);
        assert_eq!(adv, result.adversarial);
        assert_eq!(apply_perturbation(&x, &result.perturbation), result.adversarial);
    }
}

#[test]
fn attack_sets_keep_only_successes() {
    let train = generate_synthetic_dataset(3, 20, 8, 1, Split::Train).unwrap();
    let test = generate_synthetic_dataset(3, 10, 8, 2, Split::Test).unwrap();
    let schedule = advsig::classifier::TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let victim = advsig::classifier::train(&Model::init(ModelConfig::reference([8, 8, 3], 3, 1)).unwrap(), &train, &schedule)
        .unwrap()
        .model;
    let other = advsig::classifier::train(&Model::init(ModelConfig::substitute([8, 8, 3], 3, 2)).unwrap(), &train, &schedule)
        .unwrap()
        .model;

    let white = build_attack_set(&victim, &test, &AttackConfig::deepfool(), &victim, None).unwrap();
    assert_eq!(white.setting, AttackSetting::WhiteBox);
    let black = build_attack_set(&other, &test, &AttackConfig::fgsm(0.3), &victim, Some(10)).unwrap();
    assert_eq!(black.setting, AttackSetting::BlackBox);
    assert!(black.attempted <= 10);

    for set in [&white, &black] {
        assert!(set.len() <= set.attempted);
        assert!(set.results.windows(2).all(|w| w[0].source_index < w[1].source_index));
        for (r, &label) in set.results.iter().zip(&set.labels) {
            assert!(r.success);
            assert_eq!(label, test.labels()[r.source_index]);
            assert_ne!(victim.predict(&r.adversarial).unwrap().class(), label);
            assert_eq!(apply_perturbation(&test.images()[r.source_index], &r.perturbation), r.adversarial);
        }
    }
}

#[test]
fn cw_is_finer_than_deepfool_which_is_finer_than_fgsm() {
    let config = advsig::io::ExperimentConfig::desk(0);
    let data = advsig::experiment::Data::generate(&config).unwrap();
    let victim = advsig::experiment::train_victim(&config, &data).unwrap().model;
    let correct: Vec<usize> = (0..data.test.len())
        .filter(|&i| victim.predict(&data.test.images()[i]).unwrap().class() == data.test.labels()[i])
        .take(80)
        .collect();
    let attacks = [AttackConfig::carlini_wagner(0.0), AttackConfig::deepfool(), AttackConfig::fgsm(0.1)];
    let results: Vec<Vec<_>> = correct
        .iter()
        .map(|&i| {
            let (x, label) = (&data.test.images()[i], data.test.labels()[i]);
            attacks.iter().map(|a| a.run(&victim, x, Some(label)).unwrap()).collect()
        })
        .collect();

    let again = attacks[0].run(&victim, &data.test.images()[correct[0]], Some(data.test.labels()[correct[0]])).unwrap();
    assert_eq!(again, results[0][0]);

    let batches: Vec<bool> = results
        .chunks(10)
        .map(|batch| {
            let matched: Vec<_> = batch.iter().filter(|r| r.iter().all(|a| a.success)).collect();
            let mean = |k: usize| matched.iter().map(|r| r[k].l2).sum::<f64>() / matched.len() as f64;
            !matched.is_empty() && mean(0) <= mean(1) && mean(1) <= mean(2)
        })
        .collect();
    let ordered = batches.iter().filter(|&&b| b).count();
    assert!(ordered as f64 >= 0.7 * batches.len() as f64, "{ordered} of {} batches ordered", batches.len());
}
