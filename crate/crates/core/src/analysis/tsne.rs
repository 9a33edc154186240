//! Exact t-SNE.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub min_gain: f64,
    /// Bisection stops when the row perplexity is this close to the target.
    pub perplexity_tolerance: f64,
    /// KL divergence is recorded every this many iterations (and at the end).
    pub kl_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            min_gain: 0.01,
            perplexity_tolerance: 1e-5,
            kl_every: 10,
            seed: 0,
        }
    }
}

/// Conditional affinities `p_{j|i}` with per-row Gaussian precision.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub conditional: Matrix,
    pub betas: Vec<f64>,
    /// Achieved perplexity per row.
    pub perplexities: Vec<f64>,
}

fn sq_distances<R: AsRef<[f64]> + Sync>(points: &[R]) -> Matrix {
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = points[i].as_ref();
            (0..n).map(|j| a.iter().zip(points[j].as_ref()).map(|(x, y)| (x - y) * (x - y)).sum()).collect()
        })
        .collect();
    Matrix::from_rows(&rows).expect("finite inputs")
}

/// Row `i` probabilities and perplexity at precision `beta`.
fn row_at(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d.iter().enumerate().map(|(j, &v)| if j == i { 0.0 } else { (-(v - min) * beta).exp() }).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let entropy: f64 = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, entropy.exp())
}

/// Bisection on each row's precision until its perplexity matches `perplexity`.
pub fn conditional_probabilities<R: AsRef<[f64]> + Sync>(points: &[R], perplexity: f64, tolerance: f64) -> Result<Affinities> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Validation("t-SNE needs at least 2 points".into()));
    }
    let d = sq_distances(points);
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let di = d.row(i);
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let mut best = row_at(di, i, beta);
            for _ in 0..500 {
                if (best.1 - perplexity).abs() < tolerance {
                    break;
                }
                if best.1 > perplexity {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                best = row_at(di, i, beta);
            }
            (best.0, beta, best.1)
        })
        .collect();
    let mut conditional = Matrix::zeros(n, n);
    let mut betas = Vec::with_capacity(n);
    let mut perplexities = Vec::with_capacity(n);
    for (i, (p, b, perp)) in rows.into_iter().enumerate() {
        conditional.row_mut(i).copy_from_slice(&p);
        betas.push(b);
        perplexities.push(perp);
    }
    Ok(Affinities { conditional, betas, perplexities })
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_probabilities(cond: &Matrix) -> Matrix {
    let n = cond.rows();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            p.set(i, j, (cond.get(i, j) + cond.get(j, i)) / (2.0 * n as f64));
        }
    }
    p
}

/// `KL(P || Q)` for embedding `y`. Depends on `y` only through pairwise distances.
pub fn kl_divergence(p: &Matrix, y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij / (num[i * n + j] / z).max(1e-300)).ln();
            }
        }
    }
    kl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL)` pairs, 1-based iterations.
    pub kl_history: Vec<(usize, f64)>,
    pub perplexities: Vec<f64>,
}

/// 2-D exact t-SNE with momentum, gains and early exaggeration.
pub fn tsne_embed<R: AsRef<[f64]> + Sync>(points: &[R], config: &TsneConfig) -> Result<TsneResult> {
    let n = points.len();
    if n < 5 {
        return Err(Error::Validation(format!("t-SNE needs n >= 5 points, got {n}")));
    }
    if !(config.perplexity > 0.0 && config.perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(Error::Validation(format!("perplexity {} infeasible for n={n}; need 0 < perplexity < {:.3}", config.perplexity, (n as f64 - 1.0) / 3.0)));
    }
    if config.iterations == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Validation("t-SNE needs iterations >= 1 and a positive learning rate".into()));
    }
    let aff = conditional_probabilities(points, config.perplexity, config.perplexity_tolerance)?;
    let p = joint_probabilities(&aff.conditional);

    let mut rng = rng_from_seed(config.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut history = Vec::new();
    let mut num = vec![0.0; n * n];
    for it in 1..=config.iterations {
        let exaggeration = if it <= config.exaggeration_iterations { config.early_exaggeration } else { 1.0 };
        let momentum = if it <= config.momentum_switch { config.initial_momentum } else { config.final_momentum };
        num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 0.0 } else { 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2)) };
            }
        });
        let z: f64 = num.iter().sum();
        let grads: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exaggeration * p.get(i, j) - num[i * n + j] / z) * num[i * n + j];
                    g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                    g[1] += 4.0 * w * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grads[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(config.min_gain);
                update[i][c] = momentum * update[i][c] - config.learning_rate * gains[i][c] * grads[i][c];
                y[i][c] += update[i][c];
            }
        }
        let mean = [y.iter().map(|v| v[0]).sum::<f64>() / n as f64, y.iter().map(|v| v[1]).sum::<f64>() / n as f64];
        y.iter_mut().for_each(|v| {
            v[0] -= mean[0];
            v[1] -= mean[1];
        });
        if (config.kl_every > 0 && it % config.kl_every == 0) || it == config.iterations {
            history.push((it, kl_divergence(&p, &y)));
        }
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::Numeric { path: "t-SNE embedding".into() });
    }
    Ok(TsneResult { coords: y, kl_history: history, perplexities: aff.perplexities })
}
