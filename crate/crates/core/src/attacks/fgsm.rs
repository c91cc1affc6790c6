use crate::attacks::{apply_perturbation, finish, AttackResult};
use crate::classifier::Model;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Fast gradient sign method: one step of size `epsilon` along the sign of
/// the loss gradient, then clipped to `[0, 1]`.
pub fn fgsm(model: &Model, image: &Tensor<f32>, label: Option<usize>, epsilon: f32) -> Result<AttackResult> {
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let original = model.predict(image)?.class();
    let label = label.unwrap_or(original);
    let grad = model.input_gradient(image, label)?;
    let (eta, _) = fgsm_from_gradient(image, &grad, epsilon);
    finish(model, image, original, eta, 1)
}

/// `eta = epsilon * sign(grad)` (sign of zero is zero) and the clipped image.
pub fn fgsm_from_gradient(image: &Tensor<f32>, grad: &Tensor<f32>, epsilon: f32) -> (Tensor<f32>, Tensor<f32>) {
    let eta = grad.map(|g| {
        if g > 0.0 {
            epsilon
        } else if g < 0.0 {
            -epsilon
        } else {
            0.0
        }
    });
    let adv = apply_perturbation(image, &eta);
    (eta, adv)
}

/// FGSM adversarial images for a batch, labels given. Used by adversarial training.
pub fn fgsm_batch(model: &Model, images: &[&Tensor<f32>], labels: &[usize], epsilon: f32) -> Result<Vec<Tensor<f32>>> {
    let grads = model.input_gradient_batch(images, labels)?;
    Ok(images
        .iter()
        .zip(&grads)
        .map(|(im, g)| fgsm_from_gradient(im, g, epsilon).1)
        .collect())
}
