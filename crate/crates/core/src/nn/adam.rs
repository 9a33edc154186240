use serde::{Deserialize, Serialize};

use super::params::{Gradients, MlpParams};
use super::train::TrainConfig;
use crate::{Error, Result};

/// First/second moment estimates and step counter for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// Hyperparameters of the update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self { learning_rate: c.learning_rate, beta1: c.beta1, beta2: c.beta2, epsilon: c.epsilon }
    }
}

/// Bias-corrected update of one tensor at step `t` (already incremented).
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, hp: AdamHyper) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * g;
        *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

/// Returns the path of the first non-finite gradient entry, if any.
pub fn find_non_finite(grads: &Gradients) -> Option<String> {
    for (name, values) in grads.tensors() {
        if let Some(i) = values.iter().position(|g| !g.is_finite()) {
            return Some(format!("{name}[{i}]"));
        }
    }
    None
}

/// One Adam step over a whole network. Gradients are checked before any state
/// changes, so a rejected step leaves `params` and `state` untouched.
pub fn adam_step(params: &mut MlpParams, grads: &Gradients, state: &mut AdamState, hp: AdamHyper) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::Contract("parameter, gradient and optimizer shapes differ".into()));
    }
    if let Some(path) = find_non_finite(grads) {
        return Err(Error::Numeric { path });
    }
    state.t += 1;
    let t = state.t;
    let grad_tensors = grads.tensors();
    let m_tensors = state.m.tensors_mut();
    let v_tensors = state.v.tensors_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grad_tensors).zip(m_tensors).zip(v_tensors) {
        adam_update(p, g, m, v, t, hp);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Dense;
    use crate::Matrix;

    fn scalar_net(w: f64) -> MlpParams {
        MlpParams::from_layers(vec![Dense { weight: Matrix::from_vec(1, 1, vec![w]).unwrap(), bias: vec![0.0] }]).unwrap()
    }

    fn hp(lr: f64) -> AdamHyper {
        AdamHyper { learning_rate: lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_net(1.0);
        let mut g = scalar_net(0.5);
        g.layers[0].bias[0] = 0.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, hp(0.001)).unwrap();
        let delta = p.layers[0].weight.get(0, 0) - 1.0;
        assert!((delta + 0.001 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((delta + 0.001).abs() < 1e-9);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut p = scalar_net(2.0);
        let g = scalar_net(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, hp(0.01)).unwrap();
        assert_eq!(p, scalar_net(2.0));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn two_steps_match_manual_recursion() {
        let (b1, b2, eps, lr, grad) = (0.9f64, 0.999f64, 1e-8, 0.01, 0.3);
        let mut p = scalar_net(0.7);
        let g = scalar_net(grad);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, hp(lr)).unwrap();
        adam_step(&mut p, &g, &mut s, hp(lr)).unwrap();

        let (mut w, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * grad;
            v = b2 * v + (1.0 - b2) * grad * grad;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.layers[0].weight.get(0, 0) - w).abs() < 1e-15);
        assert!((s.m.layers[0].weight.get(0, 0) - m).abs() < 1e-15);
        assert!((s.v.layers[0].weight.get(0, 0) - v).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_named_and_rejected() {
        let mut p = scalar_net(1.0);
        let mut g = scalar_net(0.0);
        g.layers[0].bias[0] = f64::INFINITY;
        let mut s = AdamState::new(&p);
        match adam_step(&mut p, &g, &mut s, hp(0.1)) {
            Err(Error::Numeric { path }) => assert_eq!(path, "layer0.bias[0]"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.t, 0);
        assert_eq!(p, scalar_net(1.0));
    }
}
