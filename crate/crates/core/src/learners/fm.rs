//! Second-order factorization machine over one-hot categorical fields.
//!
//! Each row activates exactly one one-hot feature per field, so the input is
//! stored as the list of active indices. The pairwise term uses the
//! `0.5 * sum_f [(sum_i v_if)^2 - sum_i v_if^2]` reformulation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmConfig {
    pub k_emb: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Latent entries start uniform with this standard deviation.
    pub init_std: f64,
    /// Keep the latent matrix at its initial value.
    pub freeze_latent: bool,
    pub seed: u64,
}

impl Default for FmConfig {
    fn default() -> Self {
        FmConfig { k_emb: 8, learning_rate: 0.05, epochs: 10, l2: 1e-5, init_std: 0.05, freeze_latent: false, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmModel {
    pub bias: f64,
    pub weights: Vec<f64>,
    /// Row-major, `k_emb` entries per one-hot feature.
    pub latent: Vec<f64>,
    /// Start of each field's block in the one-hot space.
    pub offsets: Vec<usize>,
    pub cardinalities: Vec<usize>,
    pub config: FmConfig,
}

/// Pairwise interaction via the sum-of-squares identity.
pub fn pairwise_term(latent: &[f64], k: usize, active: &[usize]) -> f64 {
    let mut total = 0.0;
    for f in 0..k {
        let (mut s, mut sq) = (0.0, 0.0);
        for &i in active {
            let v = latent[i * k + f];
            s += v;
            sq += v * v;
        }
        total += s * s - sq;
    }
    0.5 * total
}

/// Pairwise interaction by explicit double sum.
pub fn pairwise_term_naive(latent: &[f64], k: usize, active: &[usize]) -> f64 {
    let mut total = 0.0;
    for a in 0..active.len() {
        for b in a + 1..active.len() {
            let (i, j) = (active[a], active[b]);
            total += (0..k).map(|f| latent[i * k + f] * latent[j * k + f]).sum::<f64>();
        }
    }
    total
}

impl FmModel {
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn embedding(&self, feature: usize) -> &[f64] {
        let k = self.config.k_emb;
        &self.latent[feature * k..(feature + 1) * k]
    }

    fn active_rows(&self, d: &Dataset) -> Result<Vec<usize>> {
        let m = self.offsets.len();
        if d.n_fields() != m {
            return Err(Error::invalid(format!("model has {m} fields, data has {}", d.n_fields())));
        }
        for f in 0..m {
            if d.codes(f).iter().any(|&c| c as usize >= self.cardinalities[f]) {
                return Err(Error::invalid(format!("field {f} has codes unseen in training")));
            }
        }
        Ok(active_indices(d, &self.offsets))
    }

    fn decision_row(&self, active: &[usize]) -> f64 {
        self.bias
            + active.iter().map(|&i| self.weights[i]).sum::<f64>()
            + pairwise_term(&self.latent, self.config.k_emb, active)
    }

    /// Rows must be encoded with the training dictionaries.
    pub fn decision(&self, d: &Dataset) -> Result<Vec<f64>> {
        let m = self.offsets.len();
        let active = self.active_rows(d)?;
        Ok(active.chunks(m).map(|a| self.decision_row(a)).collect())
    }

    pub fn predict_proba(&self, d: &Dataset) -> Result<Vec<f64>> {
        Ok(self.decision(d)?.into_iter().map(sigmoid).collect())
    }
}

fn active_indices(d: &Dataset, offsets: &[usize]) -> Vec<usize> {
    let m = offsets.len();
    let mut active = vec![0usize; d.n_rows() * m];
    for (f, &off) in offsets.iter().enumerate() {
        for (r, &c) in d.codes(f).iter().enumerate() {
            active[r * m + f] = off + c as usize;
        }
    }
    active
}

pub fn train_fm(d: &Dataset, cfg: &FmConfig) -> Result<FmModel> {
    if cfg.k_emb == 0 {
        return Err(Error::invalid("k_emb must be at least 1"));
    }
    let n = d.n_rows();
    let labels = d.labels();
    if n == 0 {
        return Err(Error::invalid("empty training data"));
    }
    let m = d.schema().n_fields();
    let cardinalities: Vec<usize> = (0..m).map(|f| d.cardinality(f)).collect();
    let mut offsets = Vec::with_capacity(m);
    let mut width = 0;
    for &c in &cardinalities {
        offsets.push(width);
        width += c;
    }
    let active = active_indices(d, &offsets);
    let k = cfg.k_emb;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // uniform on [-a, a] has standard deviation a / sqrt(3)
    let a = cfg.init_std * 3f64.sqrt();
    let mut latent: Vec<f64> =
        (0..width * k).map(|_| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 }).collect();
    let base = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
    let base = base.clamp(1e-6, 1.0 - 1e-6);
    let mut bias = (base / (1.0 - base)).ln();
    let mut weights = vec![0.0; width];

    let mut order: Vec<usize> = (0..n).collect();
    let mut sums = vec![0.0; k];
    let lr = cfg.learning_rate;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &r in &order {
            let act = &active[r * m..(r + 1) * m];
            sums.iter_mut().for_each(|s| *s = 0.0);
            let mut sq = 0.0;
            for &i in act {
                for f in 0..k {
                    let v = latent[i * k + f];
                    sums[f] += v;
                    sq += v * v;
                }
            }
            let pair = 0.5 * (sums.iter().map(|s| s * s).sum::<f64>() - sq);
            let z = bias + act.iter().map(|&i| weights[i]).sum::<f64>() + pair;
            let g = sigmoid(z) - labels[r] as f64;
            bias -= lr * g;
            for &i in act {
                weights[i] -= lr * (g + cfg.l2 * weights[i]);
                if !cfg.freeze_latent {
                    for f in 0..k {
                        let v = latent[i * k + f];
                        latent[i * k + f] -= lr * (g * (sums[f] - v) + cfg.l2 * v);
                    }
                }
            }
        }
    }
    Ok(FmModel { bias, weights, latent, offsets, cardinalities, config: cfg.clone() })
}
