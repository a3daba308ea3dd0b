use super::model::Model;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One SGD step for a single tensor:
/// `g' = g + wd·w;  v = μ·v − lr·g';  w = w + v`.
pub fn sgd_update(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        let g = g + weight_decay * *w;
        *v = momentum * *v - lr * g;
        *w += *v;
    }
}

/// Applies [`sgd_update`] to every parameter. Gradients are checked first,
/// so a non-finite value leaves the model untouched.
pub fn sgd_step(model: &mut Model, grads: &[Tensor], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if grads.len() != model.params().len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            model.params().len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(model.params()).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient {i} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient in parameter tensor {i}")));
        }
    }
    let (params, velocity) = model.params_and_velocity_mut();
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        sgd_update(p.data_mut(), v.data_mut(), g.data(), lr, momentum, weight_decay);
    }
    Ok(())
}

/// Linear decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(epoch: usize, max_epochs: usize, lr_start: f64, lr_end: f64) -> f64 {
    if max_epochs <= 1 {
        return lr_start;
    }
    let t = epoch.min(max_epochs - 1) as f64 / (max_epochs - 1) as f64;
    lr_start + t * (lr_end - lr_start)
}
