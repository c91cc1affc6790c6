//! Brute-force Mann-Whitney statistic as an AUC oracle.

use advsig::evaluation::{auc, roc_curve, ScoredSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (legitimate, adversarial) pairs where the legitimate sample
/// scores higher, ties counting one half.
pub fn mann_whitney(legitimate: &[f64], adversarial: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &l in legitimate {
        for &a in adversarial {
            wins += if l > a {
                1.0
            } else if l == a {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (legitimate.len() * adversarial.len()) as f64
}

/// Scores drawn from a coarse grid so ties are common.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<f64> {
    let levels = rng.gen_range(3..40);
    (0..n)
        .map(|_| ((rng.gen_range(0.0..1.0f64) + shift) * levels as f64).round() / levels as f64)
        .collect()
}

/// Largest `|AUC − Mann-Whitney|` over `sets` random scored sets of size at most 200.
pub fn worst_gap(sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sets {
        let total = rng.gen_range(2..=200);
        let n_legit = rng.gen_range(1..total);
        let shift = rng.gen_range(-0.5..0.5);
        let legit = random_scores(&mut rng, n_legit, shift);
        let adv = random_scores(&mut rng, total - n_legit, 0.0);
        let set = ScoredSet::from_scores(&legit, &adv).unwrap();
        let area = auc(&roc_curve(&set).unwrap());
        worst = worst.max((area - mann_whitney(&legit, &adv)).abs());
    }
    worst
}
