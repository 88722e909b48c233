//! Field-pair search guided by a latent factorization of pair effectiveness.
//!
//! Pair scores start as information gain ratios of the joint codes, scaled
//! to `[0, 1]`, and are factorized into non-negative per-field vectors. Each
//! iteration expands the unused pair with the largest predicted score, runs
//! the selection cascade on its candidates and nudges the two field vectors
//! toward the observed success rate `N_valid / N_FG`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{Operator, Targets};
use crate::construct::{
    enumerate_specs, imputation_mean, impute, materialize, ExpansionConfig, FeatureMatrix, FeatureSpec, Provenance,
};
use crate::dataset::{Dataset, Indicator};
use crate::error::{Error, Result};
use crate::learners::GbdtConfig;
use crate::selection::{evaluate, fsa_on_split, SelectionThresholds};

fn entropy<I: IntoIterator<Item = usize>>(counts: I, n: f64) -> f64 {
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// `I(C; L) / H(C)` in bits, where `C` is the joint code of the two columns.
/// Returns 0 when `H(C) = 0`.
pub fn info_gain_ratio(codes_i: &[u32], codes_j: &[u32], labels: &[u8]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint: BTreeMap<(u32, u32), [usize; 2]> = BTreeMap::new();
    for r in 0..n {
        joint.entry((codes_i[r], codes_j[r])).or_default()[labels[r] as usize] += 1;
    }
    let nf = n as f64;
    let h_c = entropy(joint.values().map(|c| c[0] + c[1]), nf);
    if h_c <= 0.0 {
        return 0.0;
    }
    let pos: usize = labels.iter().map(|&y| y as usize).sum();
    let h_l = entropy([pos, n - pos], nf);
    let h_l_given_c: f64 = joint
        .values()
        .map(|c| {
            let nc = (c[0] + c[1]) as f64;
            nc / nf * entropy(c.iter().copied(), nc)
        })
        .sum();
    ((h_l - h_l_given_c) / h_c).max(0.0)
}

/// Symmetric matrix of pair scores, min-max scaled over the off-diagonal.
pub type PairMatrix = Vec<Vec<f64>>;

/// Min-max scale the off-diagonal in place; all-equal entries become 0.5.
pub fn scale_pair_matrix(p: &mut PairMatrix) {
    let m = p.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        for j in i + 1..m {
            lo = lo.min(p[i][j]);
            hi = hi.max(p[i][j]);
        }
    }
    for i in 0..m {
        for j in 0..m {
            p[i][j] = if i == j {
                0.0
            } else if hi > lo {
                (p[i][j] - lo) / (hi - lo)
            } else {
                0.5
            };
        }
    }
}

pub fn init_pair_matrix(d: &Dataset) -> Result<PairMatrix> {
    let m = d.n_fields();
    if m < 2 {
        return Err(Error::config("pair search needs at least two fields"));
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let scores: Vec<f64> = pairs.par_iter().map(|&(i, j)| info_gain_ratio(d.codes(i), d.codes(j), d.labels())).collect();
    let mut p = vec![vec![0.0; m]; m];
    for (&(i, j), s) in pairs.iter().zip(scores) {
        p[i][j] = s;
        p[j][i] = s;
    }
    scale_pair_matrix(&mut p);
    Ok(p)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reconstruction_loss(p: &PairMatrix, v: &[Vec<f64>]) -> f64 {
    let m = p.len();
    let mut loss = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let e = p[i][j] - dot(&v[i], &v[j]);
            loss += e * e;
        }
    }
    loss
}

/// Root mean squared off-diagonal error of `v_i . v_j` against `p`.
pub fn off_diagonal_rmse(p: &PairMatrix, v: &[Vec<f64>]) -> f64 {
    let m = p.len();
    let pairs = m * m.saturating_sub(1) / 2;
    if pairs == 0 {
        return 0.0;
    }
    (reconstruction_loss(p, v) / pairs as f64).sqrt()
}

/// Non-negative factorization `p_ij ~ v_i . v_j` over `i < j` by projected
/// gradient descent with a backtracking step size.
pub fn factorize(p: &PairMatrix, k: usize, epochs: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::config("k_latent must be at least 1"));
    }
    let m = p.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = 1.0 / (k as f64).sqrt();
    let mut v: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| rng.gen_range(0.0..hi)).collect()).collect();
    let mut loss = reconstruction_loss(p, &v);
    let mut step = 0.1;
    let mut grad = vec![vec![0.0; k]; m];
    for _ in 0..epochs {
        if loss <= 1e-14 {
            break;
        }
        for g in grad.iter_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        for i in 0..m {
            for j in i + 1..m {
                let e = p[i][j] - dot(&v[i], &v[j]);
                for f in 0..k {
                    grad[i][f] -= 2.0 * e * v[j][f];
                    grad[j][f] -= 2.0 * e * v[i][f];
                }
            }
        }
        loop {
            let cand: Vec<Vec<f64>> = v
                .iter()
                .zip(&grad)
                .map(|(vi, gi)| vi.iter().zip(gi).map(|(x, g)| (x - step * g).max(0.0)).collect())
                .collect();
            let cand_loss = reconstruction_loss(p, &cand);
            if cand_loss < loss {
                let rel = (loss - cand_loss) / loss;
                v = cand;
                loss = cand_loss;
                step *= 1.2;
                if rel < 1e-4 {
                    return Ok(v);
                }
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Ok(v);
            }
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Latent-factor guided order with early stopping.
    Mf,
    /// Every pair in lexicographic order, no early stop.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pair: (usize, usize),
    pub pair_names: (String, String),
    /// `v_i . v_j` when the pair was chosen.
    pub predicted: f64,
    pub n_fg: usize,
    pub n_valid: usize,
    pub p_dot: f64,
    pub score: f64,
    pub score_max: f64,
    pub accepted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSearchState {
    pub m: usize,
    /// Scaled initial pair scores.
    pub p: PairMatrix,
    /// One latent vector per field.
    pub v: Vec<Vec<f64>>,
    pub used: BTreeSet<(usize, usize)>,
    pub eta: f64,
    pub patience: usize,
    pub score_max: f64,
    pub stale: usize,
    pub history: Vec<IterationRecord>,
}

impl PairSearchState {
    pub fn new(p: PairMatrix, v: Vec<Vec<f64>>, eta: f64, patience: usize) -> Self {
        PairSearchState {
            m: p.len(),
            p,
            v,
            used: BTreeSet::new(),
            eta,
            patience,
            score_max: 0.5,
            stale: 0,
            history: Vec::new(),
        }
    }

    pub fn predicted(&self, i: usize, j: usize) -> f64 {
        dot(&self.v[i], &self.v[j])
    }

    pub fn max_iterations(&self) -> usize {
        self.m * self.m.saturating_sub(1) / 2
    }

    /// Unused pair with the largest `v_i . v_j`, smallest `(i, j)` on ties.
    pub fn next_pair(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..self.m {
            for j in i + 1..self.m {
                if self.used.contains(&(i, j)) {
                    continue;
                }
                let s = self.predicted(i, j);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some(((i, j), s));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// Smallest unused pair in lexicographic order.
    pub fn next_pair_lexicographic(&self) -> Option<(usize, usize)> {
        (0..self.m).flat_map(|i| (i + 1..self.m).map(move |j| (i, j))).find(|pair| !self.used.contains(pair))
    }

    /// Move `v_i` and `v_j` (simultaneously) toward the observed rate, then
    /// clamp negative entries to zero.
    pub fn update(&mut self, i: usize, j: usize, p_dot: f64) {
        let d = p_dot - self.predicted(i, j);
        let (vi, vj) = (self.v[i].clone(), self.v[j].clone());
        for f in 0..vi.len() {
            self.v[i][f] = (vi[f] + self.eta * d * vj[f]).max(0.0);
            self.v[j][f] = (vj[f] + self.eta * d * vi[f]).max(0.0);
        }
    }

    /// Record a new score; returns true when the patience is exhausted.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.score_max {
            self.score_max = score;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub k_latent: usize,
    pub eta: f64,
    pub patience: usize,
    pub factorize_epochs: usize,
    pub mode: SearchMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { k_latent: 4, eta: 0.1, patience: 5, factorize_epochs: 500, mode: SearchMode::Mf }
    }
}

/// One (indicator, operator) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub indicator: Indicator,
    pub operator: Operator,
    pub seed: u64,
}

impl Task {
    pub fn name(&self, d: &Dataset) -> String {
        format!("{}:{}", d.schema().indicator_name(&self.indicator), self.operator)
    }
}

/// Everything a task needs besides the data.
#[derive(Debug, Clone)]
pub struct TaskContext<'a> {
    pub search: &'a SearchConfig,
    pub expansion: &'a ExpansionConfig,
    pub thresholds: &'a SelectionThresholds,
    pub learner: &'a GbdtConfig,
    pub window_open_lower: bool,
    pub train: &'a [usize],
    pub valid: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedFeature {
    pub spec: FeatureSpec,
    pub name: String,
    /// Imputed values on the searched rows.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    pub imputation: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task: Task,
    pub name: String,
    pub accepted: Vec<AcceptedFeature>,
    pub history: Vec<IterationRecord>,
    pub stopped_early: bool,
    pub initial_matrix: PairMatrix,
}

impl TaskResult {
    pub fn matrix(&self, n_rows: usize) -> FeatureMatrix {
        let mut fm = FeatureMatrix::empty(n_rows);
        for a in &self.accepted {
            fm.names.push(a.name.clone());
            fm.columns.push(a.values.clone());
            fm.missing.push(a.missing.clone());
        }
        fm
    }
}

/// Materialize `specs` on `d` and impute each column with its mean over `train`.
pub fn materialize_candidates(
    d: &Dataset,
    specs: &[FeatureSpec],
    open_lower: bool,
    train: &[usize],
) -> Result<(FeatureMatrix, Vec<f64>)> {
    let cols: Vec<Vec<f64>> = specs
        .par_iter()
        .map(|s| materialize(d, Targets::Reference, s, open_lower).map(|c| c.values))
        .collect::<Result<_>>()?;
    let mut fm = FeatureMatrix::empty(d.n_rows());
    let mut fills = Vec::with_capacity(specs.len());
    for (spec, mut values) in specs.iter().zip(cols) {
        let fill = imputation_mean(&values, Some(train));
        fm.missing.push(values.iter().map(|v| !v.is_finite()).collect());
        impute(&mut values, fill);
        fm.names.push(spec.canonical_name(d.schema()));
        fm.columns.push(values);
        fills.push(fill);
    }
    Ok((fm, fills))
}

/// Search pairs for one task on the sampled data.
pub fn run_task(d: &Dataset, task: Task, ctx: &TaskContext<'_>) -> Result<TaskResult> {
    if !task.operator.applies_to(task.indicator) {
        return Err(Error::config(format!("operator {} does not apply to this indicator", task.operator)));
    }
    let name = task.name(d);
    let schema = d.schema();
    let p = init_pair_matrix(d)?;
    let v = factorize(&p, ctx.search.k_latent, ctx.search.factorize_epochs, task.seed)?;
    let mut state = PairSearchState::new(p.clone(), v, ctx.search.eta, ctx.search.patience);
    let mut seen = HashSet::new();
    let mut accepted: Vec<AcceptedFeature> = Vec::new();
    let labels = d.labels();
    let ytr: Vec<u8> = ctx.train.iter().map(|&r| labels[r]).collect();
    let yva: Vec<u8> = ctx.valid.iter().map(|&r| labels[r]).collect();
    let mut stopped_early = false;

    while state.used.len() < state.max_iterations() {
        let pair = match ctx.search.mode {
            SearchMode::Mf => state.next_pair(),
            SearchMode::Exhaustive => state.next_pair_lexicographic(),
        };
        let Some((i, j)) = pair else { break };
        let predicted = state.predicted(i, j);
        let specs = enumerate_specs((i, j), task.indicator, task.operator, ctx.expansion, &mut seen);
        let n_fg = specs.len();
        let iteration = state.history.len() + 1;
        let pair_names = (schema.categorical[i].clone(), schema.categorical[j].clone());

        let mut names = Vec::new();
        if n_fg > 0 {
            let (cands, fills) = materialize_candidates(d, &specs, ctx.window_open_lower, ctx.train)?;
            let (selected, _) = fsa_on_split(&cands, labels, ctx.train, ctx.valid, ctx.thresholds, ctx.learner)?;
            for s in selected {
                names.push(s.name.clone());
                accepted.push(AcceptedFeature {
                    spec: specs[s.index],
                    name: s.name,
                    values: cands.columns[s.index].clone(),
                    missing: cands.missing[s.index].clone(),
                    imputation: fills[s.index],
                    provenance: Provenance {
                        task: name.clone(),
                        task_id: task.id,
                        iteration,
                        pair: pair_names.clone(),
                        variance: s.variance,
                        importance: s.importance,
                        wrapper_delta: s.wrapper_delta,
                    },
                });
            }
        }
        let n_valid = names.len();
        let p_dot = if n_fg == 0 { 0.0 } else { n_valid as f64 / n_fg as f64 };
        state.update(i, j, p_dot);
        state.used.insert((i, j));

        let tr: Vec<Vec<f64>> = accepted.iter().map(|a| ctx.train.iter().map(|&r| a.values[r]).collect()).collect();
        let va: Vec<Vec<f64>> = accepted.iter().map(|a| ctx.valid.iter().map(|&r| a.values[r]).collect()).collect();
        let tr: Vec<&[f64]> = tr.iter().map(|c| c.as_slice()).collect();
        let va: Vec<&[f64]> = va.iter().map(|c| c.as_slice()).collect();
        let score = evaluate(&tr, &ytr, &va, &yva, ctx.learner)?;
        let exhausted = state.observe(score);
        log::debug!("{name} iteration {iteration}: pair ({i}, {j}) N_FG={n_fg} N_valid={n_valid} score={score:.5}");
        state.history.push(IterationRecord {
            iteration,
            pair: (i, j),
            pair_names,
            predicted,
            n_fg,
            n_valid,
            p_dot,
            score,
            score_max: state.score_max,
            accepted: names,
        });
        if exhausted && ctx.search.mode == SearchMode::Mf && state.used.len() < state.max_iterations() {
            stopped_early = true;
            break;
        }
    }
    Ok(TaskResult { task, name, accepted, history: state.history, stopped_early, initial_matrix: p })
}
