//! Central finite differences, used as an independent oracle for backprop.

use super::params::{Gradients, MlpParams};
use crate::{Error, Matrix, Result};

/// `(f(x+h) - f(x-h)) / 2h` for a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Numerical gradient of the mean inference-mode cross-entropy with respect to
/// every parameter, perturbing one entry at a time.
pub fn finite_diff_grad(params: &MlpParams, batch: &Matrix, labels: &[u8], h: f64) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(Error::Validation(format!("step h={h} must be positive")));
    }
    // Surface shape errors before the perturbation loop.
    params.mean_loss(batch, labels)?;
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    for (l, layer) in params.layers.iter().enumerate() {
        for idx in 0..layer.weight.as_slice().len() {
            let orig = layer.weight.as_slice()[idx];
            probe.layers[l].weight.as_mut_slice()[idx] = orig + h;
            let up = probe.mean_loss(batch, labels)?;
            probe.layers[l].weight.as_mut_slice()[idx] = orig - h;
            let down = probe.mean_loss(batch, labels)?;
            probe.layers[l].weight.as_mut_slice()[idx] = orig;
            grads.layers[l].weight.as_mut_slice()[idx] = (up - down) / (2.0 * h);
        }
        for idx in 0..layer.bias.len() {
            let orig = layer.bias[idx];
            probe.layers[l].bias[idx] = orig + h;
            let up = probe.mean_loss(batch, labels)?;
            probe.layers[l].bias[idx] = orig - h;
            let down = probe.mean_loss(batch, labels)?;
            probe.layers[l].bias[idx] = orig;
            grads.layers[l].bias[idx] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Largest elementwise relative error `|a-b| / max(|a|+|b|, floor)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(floor))
        .fold(0.0, f64::max)
}
