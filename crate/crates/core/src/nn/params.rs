use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Matrix, Result};

/// Layer widths of the reference network: 20 inputs, hidden 30 and 10, two logits.
pub const BASELINE_SHAPE: [usize; 4] = [20, 30, 10, 2];

/// One affine layer, `z = x·Wᵀ + b` with `W` stored `[out × in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        let limit = glorot_limit(inputs, outputs);
        fill_uniform(layer.weight.as_mut_slice(), limit, rng);
        layer
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn fill_uniform(values: &mut [f64], limit: f64, rng: &mut Rng) {
    if limit == 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    for v in values {
        *v = dist.sample(rng);
    }
}

/// Ordered stack of dense layers. Every layer but the last is followed by ReLU;
/// the last layer emits logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Gradients share the parameter layout.
pub type Gradients = MlpParams;

impl MlpParams {
    /// Glorot-initialised network with the given layer widths (`[in, h1, ..., out]`).
    pub fn init(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Validation(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn baseline(rng: &mut Rng) -> Self {
        Self::init(&BASELINE_SHAPE, rng).expect("baseline widths are valid")
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let params = Self { layers };
        params.validate()?;
        Ok(params)
    }

    /// Consecutive layers must chain and every value must be finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("network has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::Shape {
                    layer: i,
                    detail: format!("bias has {} entries for {} outputs", layer.bias.len(), layer.outputs()),
                });
            }
            if i > 0 && self.layers[i - 1].outputs() != layer.inputs() {
                return Err(Error::Shape {
                    layer: i,
                    detail: format!("expects {} inputs, previous layer emits {}", layer.inputs(), self.layers[i - 1].outputs()),
                });
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric { path: format!("layer{i}") });
            }
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs()];
        w.extend(self.layers.iter().map(Dense::outputs));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Dense::zeros_like).collect() }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    /// All parameters in layer order: weights row-major, then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Mutable views over every tensor in [`flatten`](Self::flatten) order,
    /// each tagged with a readable path such as `layer1.weight`.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weight"), layer.weight.as_mut_slice()));
            out.push((format!("layer{i}.bias"), layer.bias.as_mut_slice()));
        }
        out
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), layer.weight.as_slice()));
            out.push((format!("layer{i}.bias"), layer.bias.as_slice()));
        }
        out
    }

    /// Euclidean norm over all parameters.
    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn baseline_shape_and_count() {
        let p = MlpParams::baseline(&mut rng_from_seed(0));
        assert_eq!(p.widths(), vec![20, 30, 10, 2]);
        assert_eq!(p.param_count(), 20 * 30 + 30 + 30 * 10 + 10 + 10 * 2 + 2);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn glorot_respects_limit_and_zero_bias() {
        let p = MlpParams::baseline(&mut rng_from_seed(3));
        for layer in &p.layers {
            let lim = glorot_limit(layer.inputs(), layer.outputs());
            assert!(layer.weight.as_slice().iter().all(|w| w.abs() <= lim));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn chaining_is_validated() {
        let layers = vec![Dense::zeros(3, 4), Dense::zeros(5, 2)];
        match MlpParams::from_layers(layers) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
