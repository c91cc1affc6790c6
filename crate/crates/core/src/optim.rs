use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Plain SGD: `param <- param - learning_rate * grad`, elementwise.
///
/// Fails without touching any parameter if shapes disagree, a gradient is
/// not finite or the update would overflow.
pub fn sgd_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], learning_rate: T) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidParameter(format!(
            "sgd_step: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient of parameter {i}"),
            });
        }
    }
    let mut updated = Vec::with_capacity(params.len());
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let data: Vec<T> = p.data().iter().zip(g.data()).map(|(&pv, &gv)| pv - learning_rate * gv).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("update of parameter {i}"),
            });
        }
        updated.push(data);
    }
    for (p, data) in params.iter_mut().zip(updated) {
        p.data_mut().copy_from_slice(&data);
    }
    Ok(())
}
