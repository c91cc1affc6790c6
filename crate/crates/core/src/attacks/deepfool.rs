use crate::attacks::{apply_perturbation, finish, AttackConfig, AttackResult};
use crate::classifier::{to_prediction, Model};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Multiclass DeepFool. Linearizes the classifier around the current point,
/// steps to the nearest linearized boundary and repeats until the label
/// changes or `max_iterations` is reached. The accumulated step is scaled by
/// `1 + overshoot`.
pub fn deepfool(model: &Model, image: &Tensor<f32>, label: Option<usize>, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    let n = model.n_classes();
    let original = model.predict(image)?.class();
    let source = label.unwrap_or(original);
    if source >= n {
        return Err(invalid(format!("label {source} out of range for {n} classes")));
    }
    let scale = 1.0 + config.overshoot;
    let mut total = vec![0.0f64; image.len()];
    let mut eta = Tensor::zeros(image.shape());
    let mut current = image.clone();
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let graph = model.input_graph(&current)?;
        let z = graph.logits();
        if to_prediction(z).class() != source {
            break;
        }
        let mut best: Option<(f64, f64, Tensor<f32>)> = None;
        for k in (0..n).filter(|&k| k != source) {
            let mut seed = vec![0.0f32; n];
            seed[k] = 1.0;
            seed[source] = -1.0;
            let w = graph.vjp(&seed)?;
            let norm2: f64 = w.data().iter().map(|&v| (v as f64) * (v as f64)).sum();
            if norm2 == 0.0 {
                continue;
            }
            let f = (z[k] as f64 - z[source] as f64).abs();
            let dist = f / norm2.sqrt();
            if best.as_ref().map_or(true, |(d, ..)| dist < *d) {
                best = Some((dist, f / norm2, w));
            }
        }
        let Some((_, step, w)) = best else { break };
        for (t, &g) in total.iter_mut().zip(w.data()) {
            *t += step * g as f64;
        }
        iterations += 1;
        eta = Tensor::new(image.shape().to_vec(), total.iter().map(|&t| (t * scale as f64) as f32).collect())?;
        current = apply_perturbation(image, &eta);
    }
    finish(model, image, original, eta, iterations)
}
