//! Gradient-boosted regression trees on log loss.
//!
//! Columns are quantile-binned once (at most `max_bins` bins); trees grow
//! depth-first with exact search over bin boundaries. Feature importance is the
//! total split gain per feature, normalized to sum to one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_inputs, sigmoid};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf values.
    pub l2: f64,
    pub max_bins: usize,
    /// Splits must gain strictly more than this.
    pub min_split_gain: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 50,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            l2: 1.0,
            max_bins: 64,
            min_split_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, columns: &[&[f64]], row: usize) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if columns[*feature][row] <= *threshold { left } else { right };
                }
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            Node::Leaf { .. } => None,
            Node::Split { feature, left, right, .. } => {
                [Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub trees: Vec<Node>,
    /// Normalized total gain per feature; all zero when no split was made.
    pub importances: Vec<f64>,
    pub config: GbdtConfig,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.importances.len()
    }

    pub fn decision(&self, columns: &[&[f64]]) -> Vec<f64> {
        let n = columns.first().map_or(0, |c| c.len());
        (0..n)
            .map(|r| self.base_score + self.trees.iter().map(|t| t.predict(columns, r)).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, columns: &[&[f64]]) -> Vec<f64> {
        self.decision(columns).into_iter().map(sigmoid).collect()
    }

    pub fn is_consistent(&self) -> bool {
        self.trees.iter().all(|t| t.max_feature().is_none_or(|f| f < self.n_features()))
    }
}

struct Binned {
    /// Per feature, the bin of every row.
    bins: Vec<Vec<u8>>,
    /// Per feature, upper edge of every bin except the last.
    edges: Vec<Vec<f64>>,
}

fn bin_columns(columns: &[&[f64]], max_bins: usize) -> Binned {
    let max_bins = max_bins.clamp(2, 256);
    let (bins, edges) = columns
        .par_iter()
        .map(|col| {
            let mut sorted = col.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            sorted.dedup();
            let edges: Vec<f64> = if sorted.len() <= max_bins {
                sorted[..sorted.len().saturating_sub(1)].to_vec()
            } else {
                let mut all = col.to_vec();
                all.sort_unstable_by(f64::total_cmp);
                let n = all.len();
                let mut e: Vec<f64> = (1..max_bins).map(|b| all[b * n / max_bins]).collect();
                e.dedup();
                let last = *all.last().expect("non-empty");
                e.retain(|&x| x < last);
                e
            };
            let bins = col.iter().map(|&v| edges.partition_point(|&e| e < v) as u8).collect();
            (bins, edges)
        })
        .unzip();
    Binned { bins, edges }
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Grower<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
    gains: Vec<f64>,
}

fn leaf_score(g: f64, h: f64, l2: f64) -> f64 {
    g * g / (h + l2)
}

impl Grower<'_> {
    fn best_split(&self, rows: &[u32], g_total: f64, h_total: f64) -> Option<Candidate> {
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        if rows.len() < 2 * min_leaf {
            return None;
        }
        let l2 = self.cfg.l2;
        let parent = leaf_score(g_total, h_total, l2);
        let per_feature: Vec<Option<Candidate>> = (0..self.binned.bins.len())
            .into_par_iter()
            .map(|f| {
                let n_bins = self.binned.edges[f].len() + 1;
                if n_bins < 2 {
                    return None;
                }
                let mut hg = vec![0.0; n_bins];
                let mut hh = vec![0.0; n_bins];
                let mut hc = vec![0usize; n_bins];
                let col = &self.binned.bins[f];
                for &r in rows {
                    let b = col[r as usize] as usize;
                    hg[b] += self.grad[r as usize];
                    hh[b] += self.hess[r as usize];
                    hc[b] += 1;
                }
                let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
                let mut best: Option<Candidate> = None;
                for b in 0..n_bins - 1 {
                    gl += hg[b];
                    hl += hh[b];
                    cl += hc[b];
                    let cr = rows.len() - cl;
                    if cl < min_leaf {
                        continue;
                    }
                    if cr < min_leaf {
                        break;
                    }
                    let gain = 0.5 * (leaf_score(gl, hl, l2) + leaf_score(g_total - gl, h_total - hl, l2) - parent);
                    if best.is_none_or(|c| gain > c.gain) {
                        best = Some(Candidate { feature: f, bin: b, gain });
                    }
                }
                best
            })
            .collect();
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best.filter(|c| c.gain > self.cfg.min_split_gain && c.gain > 0.0)
    }

    /// Grow a subtree over `rows`, adding its leaf values to `raw`.
    fn grow(&mut self, rows: &mut [u32], depth: usize, raw: &mut [f64]) -> Node {
        let g: f64 = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r as usize]).sum();
        let split = if depth < self.cfg.max_depth { self.best_split(rows, g, h) } else { None };
        match split {
            None => {
                let value = -g / (h + self.cfg.l2) * self.cfg.learning_rate;
                for &r in rows.iter() {
                    raw[r as usize] += value;
                }
                Node::Leaf { value }
            }
            Some(c) => {
                self.gains[c.feature] += c.gain;
                let col = &self.binned.bins[c.feature];
                let mut mid = 0;
                for i in 0..rows.len() {
                    if col[rows[i] as usize] as usize <= c.bin {
                        rows.swap(i, mid);
                        mid += 1;
                    }
                }
                let (left_rows, right_rows) = rows.split_at_mut(mid);
                let left = self.grow(left_rows, depth + 1, raw);
                let right = self.grow(right_rows, depth + 1, raw);
                Node::Split {
                    feature: c.feature,
                    threshold: self.binned.edges[c.feature][c.bin],
                    gain: c.gain,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
        }
    }
}

pub fn train_gbdt(columns: &[&[f64]], labels: &[u8], cfg: &GbdtConfig) -> Result<GbdtModel> {
    let n = check_inputs(columns, labels)?;
    let binned = bin_columns(columns, cfg.max_bins);
    let p = (labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (p / (1.0 - p)).ln();

    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut gains = vec![0.0; columns.len()];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut rows: Vec<u32> = (0..n as u32).collect();
    for _ in 0..cfg.n_trees {
        for r in 0..n {
            let pr = sigmoid(raw[r]);
            grad[r] = pr - labels[r] as f64;
            hess[r] = (pr * (1.0 - pr)).max(1e-16);
        }
        let mut grower = Grower { binned: &binned, grad: &grad, hess: &hess, cfg, gains: std::mem::take(&mut gains) };
        let tree = grower.grow(&mut rows, 0, &mut raw);
        gains = grower.gains;
        trees.push(tree);
    }
    let total: f64 = gains.iter().sum();
    let importances = if total > 0.0 { gains.iter().map(|g| g / total).collect() } else { vec![0.0; columns.len()] };
    Ok(GbdtModel { base_score, trees, importances, config: cfg.clone() })
}
