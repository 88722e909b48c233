//! L2-regularized logistic regression trained by mini-batch gradient descent
//! on z-scored columns.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_inputs, sigmoid};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { learning_rate: 0.1, epochs: 30, batch_size: 128, l2: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    /// Weights in standardized space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub config: LrConfig,
}

/// Row-major standardized copy of `columns`. Constant columns become zero.
fn standardize(columns: &[&[f64]], means: &[f64], scales: &[f64], n: usize) -> Vec<f64> {
    let d = columns.len();
    let mut x = vec![0.0; n * d];
    for (j, col) in columns.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            x[r * d + j] = if scales[j] > 0.0 { (v - means[j]) / scales[j] } else { 0.0 };
        }
    }
    x
}

/// Mean log loss plus `l2/2 * |w|^2`, and its gradient in `(w, b)`.
///
/// `x` is row-major with `weights.len()` columns.
pub fn loss_and_gradient(weights: &[f64], bias: f64, x: &[f64], labels: &[u8], l2: f64) -> (f64, Vec<f64>, f64) {
    let d = weights.len();
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d];
    let mut grad_b = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &x[r * d..(r + 1) * d];
        let z = bias + row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        // log(1 + e^z) - y z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y as f64 * z;
        let g = sigmoid(z) - y as f64;
        for (gj, a) in grad.iter_mut().zip(row) {
            *gj += g * a;
        }
        grad_b += g;
    }
    loss /= n;
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    for (gj, w) in grad.iter_mut().zip(weights) {
        *gj = *gj / n + l2 * w;
    }
    (loss, grad, grad_b / n)
}

pub fn train_lr(columns: &[&[f64]], labels: &[u8], cfg: &LrConfig) -> Result<LrModel> {
    let n = check_inputs(columns, labels)?;
    let d = columns.len();
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let scales: Vec<f64> = columns
        .iter()
        .zip(&means)
        .map(|(c, m)| {
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            if var > 1e-24 { var.sqrt() } else { 0.0 }
        })
        .collect();
    let x = standardize(columns, &means, &scales, n);

    let base = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
    let mut bias = (base.clamp(1e-6, 1.0 - 1e-6) / (1.0 - base.clamp(1e-6, 1.0 - 1e-6))).ln();
    let mut weights = vec![0.0; d];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.max(1);
    let mut grad = vec![0.0; d];

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for &r in chunk {
                let row = &x[r * d..(r + 1) * d];
                let z = bias + row.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>();
                let g = sigmoid(z) - labels[r] as f64;
                for (gj, a) in grad.iter_mut().zip(row) {
                    *gj += g * a;
                }
                grad_b += g;
            }
            let scale = 1.0 / chunk.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * (g * scale + cfg.l2 * *w);
            }
            bias -= cfg.learning_rate * grad_b * scale;
        }
    }
    Ok(LrModel { weights, bias, means, scales, config: cfg.clone() })
}

impl LrModel {
    pub fn decision(&self, columns: &[&[f64]]) -> Vec<f64> {
        let n = columns.first().map_or(0, |c| c.len());
        let mut z = vec![self.bias; n];
        for (j, col) in columns.iter().enumerate() {
            if self.scales[j] == 0.0 {
                continue;
            }
            let (w, m, s) = (self.weights[j], self.means[j], self.scales[j]);
            for (zr, &v) in z.iter_mut().zip(col.iter()) {
                *zr += w * (v - m) / s;
            }
        }
        z
    }

    pub fn predict_proba(&self, columns: &[&[f64]]) -> Vec<f64> {
        self.decision(columns).into_iter().map(sigmoid).collect()
    }
}
