use crate::attacks::{finish, l2_distance, AttackConfig, AttackResult};
use crate::classifier::{to_prediction, Model};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const UPPER_START: f64 = 1e10;

/// Untargeted Carlini-Wagner L2 attack.
///
/// Minimizes `‖x' - x‖² + c · max(z_src - max_{j≠src} z_j + κ', 0)` over
/// `x' = (tanh(w) + 1) / 2` with Adam, binary-searching `c`. `κ' = kappa ·
/// logit_scale`. Returns the successful point with the smallest distance, or
/// the last iterate if no step succeeded.
pub fn carlini_wagner(
    model: &Model,
    image: &Tensor<f32>,
    label: Option<usize>,
    kappa: f32,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    if !(kappa >= 0.0) {
        return Err(invalid(format!("kappa must be non-negative, got {kappa}")));
    }
    let n = model.n_classes();
    if n < 2 {
        return Err(invalid("C&W needs at least two classes"));
    }
    let original = model.predict(image)?.class();
    let source = label.unwrap_or(original);
    if source >= n {
        return Err(invalid(format!("label {source} out of range for {n} classes")));
    }
    let cw = &config.cw;
    let margin = kappa as f64 * cw.logit_scale as f64;
    let x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let w0: Vec<f64> = x.iter().map(|&v| ((2.0 * v - 1.0) * 0.999_999).atanh()).collect();
    let check_every = (config.max_iterations / 10).max(1);

    let (mut lower, mut upper) = (0.0f64, UPPER_START);
    let mut c = cw.initial_const;
    let mut best: Option<(f64, Tensor<f32>)> = None;
    let mut last = image.clone();
    let mut iterations = 0;

    for _ in 0..cw.binary_search_steps {
        let mut w = w0.clone();
        let mut m = vec![0.0f64; w.len()];
        let mut v = vec![0.0f64; w.len()];
        let mut prev = f64::INFINITY;
        let mut succeeded = false;

        for step in 0..config.max_iterations {
            let t: Vec<f64> = w.iter().map(|&wi| wi.tanh()).collect();
            let candidate = Tensor::new(image.shape().to_vec(), t.iter().map(|&ti| ((ti + 1.0) / 2.0) as f32).collect())?;
            let graph = model.input_graph(&candidate)?;
            let z = graph.logits();
            let other = (0..n)
                .filter(|&j| j != source)
                .max_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)))
                .expect("at least two classes");
            let gap = z[source] as f64 - z[other] as f64;
            let hinge = (gap + margin).max(0.0);
            let dist2 = l2_distance(&candidate, image).powi(2);
            let loss = dist2 + c * hinge;

            if gap + margin <= 0.0 && to_prediction(z).class() != source {
                succeeded = true;
                if best.as_ref().map_or(true, |(d, _)| dist2 < *d) {
                    best = Some((dist2, candidate.clone()));
                }
            }

            if cw.abort_early && step % check_every == 0 {
                if loss > prev * 0.9999 {
                    last = candidate;
                    break;
                }
                prev = loss;
            }

            let hinge_grad = if hinge > 0.0 {
                let mut seed = vec![0.0f32; n];
                seed[source] = 1.0;
                seed[other] = -1.0;
                Some(graph.vjp(&seed)?)
            } else {
                None
            };
            iterations += 1;
            let lr = cw.learning_rate as f64;
            let k = (step + 1) as i32;
            let (bc1, bc2) = (1.0 - BETA1.powi(k), 1.0 - BETA2.powi(k));
            for i in 0..w.len() {
                let xi = (t[i] + 1.0) / 2.0;
                let mut g = 2.0 * (xi - x[i]);
                if let Some(h) = &hinge_grad {
                    g += c * h.data()[i] as f64;
                }
                g *= (1.0 - t[i] * t[i]) / 2.0;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                w[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
            last = candidate;
        }

        if succeeded {
            upper = upper.min(c);
            c = (lower + upper) / 2.0;
        } else {
            lower = lower.max(c);
            c = if upper < UPPER_START { (lower + upper) / 2.0 } else { c * 10.0 };
        }
    }

    let target = best.map_or(last, |(_, t)| t);
    let eta = Tensor::new(
        image.shape().to_vec(),
        target.data().iter().zip(image.data()).map(|(&a, &b)| a - b).collect(),
    )?;
    finish(model, image, original, eta, iterations)
}
