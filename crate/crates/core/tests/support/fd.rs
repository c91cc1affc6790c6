//! Central finite differences in f64 against the tape's reverse-mode gradients.

use advsig::autodiff::{Padding, Tape, Var};
use advsig::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    /// Largest norm-wise relative error over all instances and inputs.
    pub worst: f64,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of the
/// gradient of `⟨w, f(inputs)⟩` for a random fixed `w`, worst over inputs.
pub fn check(inputs: &[Tensor<f64>], build: &Build, rng: &mut ChaCha8Rng) -> f64 {
    let forward = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = build(&mut tape, &vars).expect("forward");
        (tape, vars, out)
    };
    let (tape, vars, out) = forward(inputs);
    let shape = tape.value(out).shape().to_vec();
    let w = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    let grads = tape.backward_with_seed(out, w.clone()).expect("backward");
    let objective = |xs: &[Tensor<f64>]| -> f64 {
        let (tape, _, out) = forward(xs);
        tape.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let mut numeric = vec![0.0; x.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            *slot = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.l2_norm().max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values kept at least `gap` away from zero, so relu stays differentiable under the probe step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values spaced far apart relative to the probe step, in random order.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|k| k as f64 * 0.01 + rng.gen_range(0.0..0.001)).collect();
    for k in (1..n).rev() {
        values.swap(k, rng.gen_range(0..=k));
    }
    Tensor::new(shape.to_vec(), values).expect("shape")
}

fn probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor<f64> {
    let mut t = uniform(rng, &[n, k], 0.1, 1.0);
    for row in t.data_mut().chunks_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    t
}

fn run(op: &'static str, instances: usize, seed: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Build)) -> OpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (inputs, build) = case(&mut rng);
        worst = worst.max(check(&inputs, &build, &mut rng));
    }
    OpReport { op, instances, worst }
}

/// Every differentiable op, `instances` random cases each.
pub fn all_ops(instances: usize, seed: u64) -> Vec<OpReport> {
    let dim = |rng: &mut ChaCha8Rng, hi: usize| rng.gen_range(1..=hi);
    vec![
        run("matmul", instances, seed, |rng| {
            let (n, d, k) = (dim(rng, 4), dim(rng, 5), dim(rng, 4));
            let inputs = vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[d, k], -1.0, 1.0)];
            (inputs, Box::new(|t, v| t.matmul(v[0], v[1])))
        }),
        run("add", instances, seed + 1, |rng| {
            let shape = [dim(rng, 4), dim(rng, 5)];
            let inputs = vec![uniform(rng, &shape, -1.0, 1.0), uniform(rng, &shape, -1.0, 1.0)];
            (inputs, Box::new(|t, v| t.add(v[0], v[1])))
        }),
        run("bias_add", instances, seed + 2, |rng| {
            let (n, k) = (dim(rng, 4), dim(rng, 6));
            let inputs = vec![uniform(rng, &[n, k], -1.0, 1.0), uniform(rng, &[k], -1.0, 1.0)];
            (inputs, Box::new(|t, v| t.bias_add(v[0], v[1])))
        }),
        run("relu", instances, seed + 3, |rng| {
            let shape = [dim(rng, 4), dim(rng, 6)];
            (vec![away_from_zero(rng, &shape, 1e-3)], Box::new(|t, v| t.relu(v[0])))
        }),
        run("softmax", instances, seed + 4, |rng| {
            let shape = [dim(rng, 4), rng.gen_range(2..=6)];
            (vec![uniform(rng, &shape, -3.0, 3.0)], Box::new(|t, v| t.softmax(v[0])))
        }),
        run("cross_entropy", instances, seed + 5, |rng| {
            let (n, k) = (dim(rng, 4), rng.gen_range(2..=6));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            (vec![probs(rng, n, k)], Box::new(move |t, v| t.cross_entropy(v[0], &labels)))
        }),
        run("softmax_cross_entropy", instances, seed + 6, |rng| {
            let (n, k) = (dim(rng, 4), rng.gen_range(2..=6));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let inputs = vec![uniform(rng, &[n, k], -3.0, 3.0)];
            (inputs, Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)))
        }),
        run("flatten", instances, seed + 7, |rng| {
            let shape = [dim(rng, 3), dim(rng, 3), dim(rng, 3), dim(rng, 2)];
            (vec![uniform(rng, &shape, -1.0, 1.0)], Box::new(|t, v| t.flatten(v[0])))
        }),
        run("conv2d", instances, seed + 8, |rng| {
            let kernel = if rng.gen_bool(0.5) { 3 } else { 1 };
            let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            let (h, w) = (rng.gen_range(kernel..=5), rng.gen_range(kernel..=5));
            let (n, cin, cout) = (dim(rng, 2), dim(rng, 2), dim(rng, 3));
            let inputs = vec![
                uniform(rng, &[n, h, w, cin], -1.0, 1.0),
                uniform(rng, &[kernel, kernel, cin, cout], -1.0, 1.0),
                uniform(rng, &[cout], -1.0, 1.0),
            ];
            (inputs, Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], padding)))
        }),
        run("max_pool", instances, seed + 9, |rng| {
            let size = rng.gen_range(1..=3);
            let shape = [dim(rng, 2), size * dim(rng, 3), size * dim(rng, 3), dim(rng, 2)];
            (vec![distinct(rng, &shape)], Box::new(move |t, v| t.max_pool(v[0], size)))
        }),
    ]
}
