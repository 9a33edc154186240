use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-feature mean and population standard deviation.
///
/// Zero-variance features get `std = 1` and are flagged in `degenerate`, so
/// they standardize to an all-zero column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(points: &[R]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Validation(format!("standardizer needs >= 2 points, got {}", points.len())));
        }
        let dim = points[0].as_ref().len();
        if points.iter().any(|p| p.as_ref().len() != dim) {
            return Err(Error::Validation("points have differing dimensions".into()));
        }
        let n = points.len() as f64;
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for p in points {
            for ((s, v), m) in var.iter_mut().zip(p.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut degenerate = Vec::with_capacity(dim);
        for (s, m) in var.iter().zip(&mean) {
            let sd = (s / n).sqrt();
            // Relative threshold: rounding in the mean leaves tiny residual variance.
            let flat = !(sd > 1e-12 * m.abs().max(1.0));
            std.push(if flat { 1.0 } else { sd });
            degenerate.push(flat);
        }
        Ok(Self { mean, std, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_one(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim() {
            return Err(Error::Validation(format!("point has {} features, standardizer expects {}", point.len(), self.dim())));
        }
        Ok(point
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .zip(&self.degenerate)
            .map(|(((v, m), s), &flat)| if flat { 0.0 } else { (v - m) / s })
            .collect())
    }

    pub fn apply<R: AsRef<[f64]>>(&self, points: &[R]) -> Result<Vec<Vec<f64>>> {
        if points.is_empty() {
            return Err(Error::Validation("no points to standardize".into()));
        }
        points.iter().map(|p| self.apply_one(p.as_ref())).collect()
    }
}
