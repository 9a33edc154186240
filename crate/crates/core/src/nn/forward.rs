//! Forward pass, softmax cross-entropy and backpropagation over a path of
//! dense layers.
//!
//! Routed architectures assemble a path from shared and per-cluster layers
//! (`trunk ++ head`), so the functions here take `&[&Dense]` rather than a
//! whole [`MlpParams`].

use rand::Rng as _;

use super::params::{Dense, Gradients, MlpParams};
use crate::rng::Rng;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Activations kept by [`forward_path`] for [`backward_path`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input fed to layer `l` (after ReLU and dropout of the previous layer).
    inputs: Vec<Matrix>,
    /// Pre-activations of hidden layers.
    hidden_pre: Vec<Matrix>,
    /// Inverted-dropout scale factors per hidden layer (0 or `1/(1-p)`), absent when no dropout ran.
    masks: Vec<Option<Matrix>>,
    /// `(outputs, inputs)` per layer, to detect a cache replayed against other parameters.
    signature: Vec<(usize, usize)>,
    mode: Mode,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dropout_mask(&self, hidden_layer: usize) -> Option<&Matrix> {
        self.masks.get(hidden_layer).and_then(Option::as_ref)
    }
}

/// Forward pass through `layers`. Hidden layers use ReLU followed by inverted
/// dropout (train mode only, and only when `dropout_rate > 0`); the final layer
/// is linear.
pub fn forward_path(
    layers: &[&Dense],
    batch: &Matrix,
    mode: Mode,
    dropout_rate: f64,
    rng: &mut Rng,
) -> Result<(Matrix, ForwardCache)> {
    if layers.is_empty() {
        return Err(Error::Validation("empty layer path".into()));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Validation(format!("dropout rate {dropout_rate} outside [0,1)")));
    }
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut hidden_pre = Vec::with_capacity(last);
    let mut masks = Vec::with_capacity(last);
    let mut current = batch.clone();
    for (l, layer) in layers.iter().enumerate() {
        if current.cols() != layer.inputs() {
            return Err(Error::Shape {
                layer: l,
                detail: format!("input has {} columns, layer expects {}", current.cols(), layer.inputs()),
            });
        }
        let mut z = current.matmul_transpose(&layer.weight);
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        inputs.push(current);
        if l == last {
            current = z;
            break;
        }
        let mut a = z.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mask = if mode == Mode::Train && dropout_rate > 0.0 {
            let keep_scale = 1.0 / (1.0 - dropout_rate);
            let mut m = Matrix::zeros(a.rows(), a.cols());
            for (mv, av) in m.as_mut_slice().iter_mut().zip(a.as_mut_slice()) {
                let u: f64 = rng.random();
                *mv = if u >= dropout_rate { keep_scale } else { 0.0 };
                *av *= *mv;
            }
            Some(m)
        } else {
            None
        };
        hidden_pre.push(z);
        masks.push(mask);
        current = a;
    }
    if !current.is_finite() {
        return Err(Error::Numeric { path: "logits".into() });
    }
    let signature = layers.iter().map(|l| (l.outputs(), l.inputs())).collect();
    Ok((current, ForwardCache { inputs, hidden_pre, masks, signature, mode }))
}

impl MlpParams {
    pub fn layer_refs(&self) -> Vec<&Dense> {
        self.layers.iter().collect()
    }

    pub fn forward(
        &self,
        batch: &Matrix,
        mode: Mode,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<(Matrix, ForwardCache)> {
        forward_path(&self.layer_refs(), batch, mode, dropout_rate, rng)
    }

    /// Inference-mode logits; no randomness is consumed.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        let mut unused = crate::rng::rng_from_seed(0);
        Ok(self.forward(batch, Mode::Infer, 0.0, &mut unused)?.0)
    }
}

/// Per-sample `-ln softmax(z)[label]` and the softmax probabilities.
///
/// Uses a shifted log-sum-exp so saturated logits stay finite.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<(Vec<f64>, Matrix)> {
    if logits.rows() == 0 {
        return Err(Error::Validation("cross-entropy needs at least one row".into()));
    }
    if logits.rows() != labels.len() {
        return Err(Error::Validation(format!("{} logit rows vs {} labels", logits.rows(), labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y as usize >= logits.cols() || y > 1) {
        return Err(Error::Validation(format!("label {bad} outside {{0,1}}")));
    }
    let mut losses = Vec::with_capacity(labels.len());
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Σ exp(z - m) includes exactly one term equal to 1.
        let rest: f64 = z.iter().map(|v| (v - m).exp()).sum::<f64>() - 1.0;
        let lse = m + rest.ln_1p();
        losses.push(lse - z[y as usize]);
        for (p, v) in probs.row_mut(r).iter_mut().zip(z) {
            *p = (v - lse).exp();
        }
    }
    Ok((losses, probs))
}

/// Gradients of the mean per-sample cross-entropy over the batch.
///
/// Returns one [`Dense`]-shaped gradient per layer of the path and, when
/// `want_input_grad` is set, the gradient with respect to the batch input.
pub fn backward_path(
    layers: &[&Dense],
    cache: &ForwardCache,
    probs: &Matrix,
    labels: &[u8],
    want_input_grad: bool,
) -> Result<(Vec<Dense>, Option<Matrix>)> {
    let signature: Vec<_> = layers.iter().map(|l| (l.outputs(), l.inputs())).collect();
    if signature != cache.signature {
        return Err(Error::Contract("forward cache was produced by a different layer stack".into()));
    }
    let n = cache.batch_size();
    if probs.rows() != n || labels.len() != n {
        return Err(Error::Contract(format!(
            "cache holds {n} rows but got {} probability rows and {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let classes = probs.cols();
    let scale = 1.0 / n as f64;
    let mut delta = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        row[y as usize] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    debug_assert_eq!(classes, layers.last().unwrap().outputs());

    let mut grads: Vec<Dense> = Vec::with_capacity(layers.len());
    let mut input_grad = None;
    for l in (0..layers.len()).rev() {
        let weight_grad = delta.transpose_matmul(&cache.inputs[l]);
        let mut bias_grad = vec![0.0; layers[l].outputs()];
        for r in 0..delta.rows() {
            for (g, d) in bias_grad.iter_mut().zip(delta.row(r)) {
                *g += d;
            }
        }
        grads.push(Dense { weight: weight_grad, bias: bias_grad });
        if l == 0 {
            if want_input_grad {
                input_grad = Some(delta.matmul(&layers[0].weight));
            }
            break;
        }
        let mut upstream = delta.matmul(&layers[l].weight);
        let h = l - 1;
        if let Some(mask) = &cache.masks[h] {
            for (u, m) in upstream.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *u *= m;
            }
        }
        for (u, z) in upstream.as_mut_slice().iter_mut().zip(cache.hidden_pre[h].as_slice()) {
            if *z <= 0.0 {
                *u = 0.0;
            }
        }
        delta = upstream;
    }
    grads.reverse();
    Ok((grads, input_grad))
}

impl MlpParams {
    pub fn backward(&self, cache: &ForwardCache, probs: &Matrix, labels: &[u8]) -> Result<Gradients> {
        let (layers, _) = backward_path(&self.layer_refs(), cache, probs, labels, false)?;
        Ok(MlpParams { layers })
    }

    /// Mean cross-entropy over the batch in inference mode.
    pub fn mean_loss(&self, batch: &Matrix, labels: &[u8]) -> Result<f64> {
        let (losses, _) = softmax_cross_entropy(&self.logits(batch)?, labels)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Argmax of each row; ties go to the lower class index.
pub fn argmax_rows(m: &Matrix) -> Vec<u8> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Predicted labels (argmax, ties toward class 0) and class probabilities.
pub fn predict(params: &MlpParams, inputs: &Matrix) -> Result<(Vec<u8>, Matrix)> {
    let logits = params.logits(inputs)?;
    let labels = argmax_rows(&logits);
    let probs = softmax_rows(&logits);
    Ok((labels, probs))
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn single(weight: &[&[f64]], bias: &[f64]) -> MlpParams {
        MlpParams::from_layers(vec![Dense { weight: Matrix::from_rows(weight).unwrap(), bias: bias.to_vec() }]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = single(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let x = Matrix::from_rows(&[[0.3, -2.0]]).unwrap();
        assert_eq!(p.logits(&x).unwrap(), x);
    }

    #[test]
    fn hand_multiplied_logit() {
        let p = single(&[&[1.0, -1.0]], &[0.5]);
        let x = Matrix::from_rows(&[[2.0, 1.0]]).unwrap();
        assert_eq!(p.logits(&x).unwrap().get(0, 0), 1.5);
    }

    #[test]
    fn zero_dropout_train_equals_infer() {
        let mut rng = rng_from_seed(1);
        let p = MlpParams::baseline(&mut rng);
        let x = Matrix::from_vec(4, 20, (0..80).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (train, _) = p.forward(&x, Mode::Train, 0.0, &mut rng).unwrap();
        assert_eq!(train, p.logits(&x).unwrap());
    }

    #[test]
    fn shape_error_names_layer() {
        let p = MlpParams::baseline(&mut rng_from_seed(0));
        let x = Matrix::zeros(1, 19);
        match p.logits(&x) {
            Err(Error::Shape { layer: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let logits = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [50.0, -50.0], [1.0, 0.0]]).unwrap();
        let (loss, probs) = softmax_cross_entropy(&logits, &[0, 1, 0, 0]).unwrap();
        assert!((loss[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss[1] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss[2] < 1e-12);
        assert!((loss[3] - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((loss[3] - 0.313262).abs() < 1e-6);
        for row in probs.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(softmax_cross_entropy(&logits, &[2]), Err(Error::Validation(_))));
    }

    #[test]
    fn output_layer_gradient_identity() {
        let mut rng = rng_from_seed(5);
        let p = MlpParams::init(&[3, 4, 2], &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.5, -0.2, 0.9]]).unwrap();
        let (logits, cache) = p.forward(&x, Mode::Train, 0.0, &mut rng).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, &[1]).unwrap();
        let g = p.backward(&cache, &probs, &[1]).unwrap();
        let hidden = &cache.inputs[1];
        for c in 0..2 {
            let err = probs.get(0, c) - if c == 1 { 1.0 } else { 0.0 };
            for j in 0..4 {
                assert!((g.layers[1].weight.get(c, j) - err * hidden.get(0, j)).abs() < 1e-15);
            }
            assert!((g.layers[1].bias[c] - err).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_correct_predictions_have_vanishing_gradient() {
        let p = MlpParams::from_layers(vec![
            Dense { weight: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), bias: vec![0.0, 0.0] },
            Dense { weight: Matrix::from_rows(&[[40.0, -40.0], [-40.0, 40.0]]).unwrap(), bias: vec![0.0, 0.0] },
        ])
        .unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let labels = [0, 1];
        let mut rng = rng_from_seed(0);
        let (logits, cache) = p.forward(&x, Mode::Train, 0.0, &mut rng).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
        let g = p.backward(&cache, &probs, &labels).unwrap();
        assert!(g.norm() < 1e-10, "norm {}", g.norm());
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let mut rng = rng_from_seed(0);
        let a = MlpParams::init(&[3, 4, 2], &mut rng).unwrap();
        let b = MlpParams::init(&[3, 5, 2], &mut rng).unwrap();
        let x = Matrix::zeros(2, 3);
        let (logits, cache) = a.forward(&x, Mode::Train, 0.0, &mut rng).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, &[0, 1]).unwrap();
        assert!(matches!(b.backward(&cache, &probs, &[0, 1]), Err(Error::Contract(_))));
        assert!(matches!(a.backward(&cache, &probs, &[0]), Err(Error::Contract(_))));
    }

    #[test]
    fn argmax_tie_goes_to_class_zero() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [-1.0, 4.0]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![0, 1]);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = rng_from_seed(9);
        let p = MlpParams::init(&[4, 6, 2], &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.4, -0.3, 0.8, 0.1]]).unwrap();
        let clean = p.logits(&x).unwrap();
        let draws = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..draws {
            let (out, _) = p.forward(&x, Mode::Train, 0.3, &mut rng).unwrap();
            acc[0] += out.get(0, 0);
            acc[1] += out.get(0, 1);
        }
        // Output is affine in the dropped activations, so its mean matches the clean output.
        let mut checked = 0;
        for (c, total) in acc.iter().enumerate() {
            let mean = total / draws as f64;
            let target = clean.get(0, c);
            if target.abs() > 0.05 {
                assert!((mean - target).abs() <= 0.02 * target.abs(), "class {c}: {mean} vs {target}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}
