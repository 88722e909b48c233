//! Filter, Embedded and Wrapper feature selection.
//!
//! [`fsa`] runs the three stages in sequence on one candidate matrix;
//! [`global_select`] merges the outputs of several tasks and runs the same
//! cascade again over the union.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::construct::FeatureMatrix;
use crate::dataset::split_indices;
use crate::error::{Error, Result};
use crate::learners::{auc, train_gbdt, GbdtConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionThresholds {
    pub t_filter: f64,
    pub t_embedded: f64,
    pub t_wrapper: f64,
    pub rate_valid: f64,
    /// Compute the filter variance on min-max-scaled columns.
    pub scaled_variance: bool,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        SelectionThresholds { t_filter: 1e-5, t_embedded: 0.02, t_wrapper: 0.0, rate_valid: 0.2, scaled_variance: true }
    }
}

impl SelectionThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_filter >= 0.0) {
            return Err(Error::config("t_filter must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.t_embedded) {
            return Err(Error::config("t_embedded must lie in [0, 1]"));
        }
        if !(self.t_wrapper >= 0.0) {
            return Err(Error::config("t_wrapper must be non-negative"));
        }
        if !(self.rate_valid > 0.0 && self.rate_valid < 1.0) {
            return Err(Error::config("rate_valid must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Learner used inside the cascade. Splits must gain more than 10 so that
/// pure noise yields a constant model (validation AUC exactly 0.5).
pub fn selection_learner() -> GbdtConfig {
    GbdtConfig { min_split_gain: 10.0, ..GbdtConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    /// Variance, importance or validation score, depending on the stage.
    pub value: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperStep {
    pub name: String,
    pub score: f64,
    pub delta: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub n_input: usize,
    pub filter: Vec<StageEntry>,
    pub embedded: Vec<StageEntry>,
    /// Wrapper candidate order (descending importance).
    pub order: Vec<String>,
    pub wrapper: Vec<WrapperStep>,
    /// Best validation score after each acceptance, starting at 0.5.
    pub trajectory: Vec<f64>,
    pub final_score: f64,
}

/// A surviving column with the scores that let it through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub index: usize,
    pub name: String,
    pub variance: f64,
    pub importance: f64,
    pub wrapper_delta: f64,
}

pub fn column_variance(col: &[f64], scaled: bool) -> f64 {
    if col.is_empty() {
        return 0.0;
    }
    let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return 0.0;
    }
    let n = col.len() as f64;
    let (shift, scale) = if scaled { (lo, range) } else { (0.0, 1.0) };
    let mean = col.iter().map(|v| (v - shift) / scale).sum::<f64>() / n;
    col.iter().map(|v| ((v - shift) / scale - mean).powi(2)).sum::<f64>() / n
}

/// Indices whose variance is at least `t_filter`, plus every column's variance.
pub fn filter_variance(x: &FeatureMatrix, t_filter: f64, scaled: bool) -> (Vec<usize>, Vec<f64>) {
    let variances: Vec<f64> = x.columns.iter().map(|c| column_variance(c, scaled)).collect();
    let kept = (0..x.n_cols()).filter(|&j| variances[j] >= t_filter).collect();
    (kept, variances)
}

fn gather<'a>(x: &'a FeatureMatrix, cols: &[usize]) -> Vec<&'a [f64]> {
    cols.iter().map(|&j| x.columns[j].as_slice()).collect()
}

fn rows_of(cols: &[&[f64]], rows: &[usize]) -> Vec<Vec<f64>> {
    cols.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect()
}

fn pick<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&r| v[r]).collect()
}

/// Train on `candidates` and keep those with importance at least `t_embedded`.
/// Returns kept positions (into `candidates`) and all importances.
pub fn embedded_select(
    xtr: &[&[f64]],
    ytr: &[u8],
    t_embedded: f64,
    cfg: &GbdtConfig,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if xtr.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let model = train_gbdt(xtr, ytr, cfg)?;
    let kept = (0..xtr.len()).filter(|&j| model.importances[j] >= t_embedded).collect();
    Ok((kept, model.importances))
}

/// Validation AUC of a model trained on `cols`; an empty set scores 0.5.
pub fn evaluate(
    xtr: &[&[f64]],
    ytr: &[u8],
    xva: &[&[f64]],
    yva: &[u8],
    cfg: &GbdtConfig,
) -> Result<f64> {
    if xtr.is_empty() {
        return auc(yva, &vec![0.0; yva.len()]);
    }
    let model = train_gbdt(xtr, ytr, cfg)?;
    auc(yva, &model.predict_proba(xva))
}

/// Greedy forward selection over `order`. Returns accepted positions (into
/// the column slices) in acceptance order and the per-step records.
pub fn wrapper_select(
    xtr: &[&[f64]],
    ytr: &[u8],
    xva: &[&[f64]],
    yva: &[u8],
    order: &[usize],
    t_wrapper: f64,
    cfg: &GbdtConfig,
) -> Result<(Vec<usize>, Vec<WrapperStep>, Vec<f64>)> {
    let mut best = evaluate(&[], ytr, &[], yva, cfg)?;
    let mut trajectory = vec![best];
    let mut selected: Vec<usize> = Vec::new();
    let mut steps = Vec::with_capacity(order.len());
    for &g in order {
        let mut trial = selected.clone();
        trial.push(g);
        let tr: Vec<&[f64]> = trial.iter().map(|&j| xtr[j]).collect();
        let va: Vec<&[f64]> = trial.iter().map(|&j| xva[j]).collect();
        let score = evaluate(&tr, ytr, &va, yva, cfg)?;
        let delta = score - best;
        let accepted = delta > t_wrapper;
        if accepted {
            selected.push(g);
            best = score;
            trajectory.push(best);
        }
        steps.push(WrapperStep { name: String::new(), score, delta, accepted });
    }
    Ok((selected, steps, trajectory))
}

/// Filter, split, Embedded, sort by importance, Wrapper.
pub fn fsa(
    x: &FeatureMatrix,
    labels: &[u8],
    th: &SelectionThresholds,
    cfg: &GbdtConfig,
    seed: u64,
) -> Result<(Vec<Selected>, SelectionReport)> {
    if labels.len() != x.n_rows {
        return Err(Error::invalid(format!("{} labels for {} rows", labels.len(), x.n_rows)));
    }
    let (train, valid) = split_indices(x.n_rows, th.rate_valid, seed)?;
    fsa_on_split(x, labels, &train, &valid, th, cfg)
}

/// [`fsa`] with an explicit train/validation split.
pub fn fsa_on_split(
    x: &FeatureMatrix,
    labels: &[u8],
    train: &[usize],
    valid: &[usize],
    th: &SelectionThresholds,
    cfg: &GbdtConfig,
) -> Result<(Vec<Selected>, SelectionReport)> {
    let mut report = SelectionReport { n_input: x.n_cols(), ..Default::default() };
    let (filter_kept, variances) = filter_variance(x, th.t_filter, th.scaled_variance);
    let kept_set: HashSet<usize> = filter_kept.iter().copied().collect();
    report.filter = (0..x.n_cols())
        .map(|j| StageEntry { name: x.names[j].clone(), value: variances[j], kept: kept_set.contains(&j) })
        .collect();

    let ytr = pick(labels, train);
    let yva = pick(labels, valid);
    let cols = gather(x, &filter_kept);
    let xtr_owned = rows_of(&cols, train);
    let xva_owned = rows_of(&cols, valid);
    let xtr: Vec<&[f64]> = xtr_owned.iter().map(|c| c.as_slice()).collect();
    let xva: Vec<&[f64]> = xva_owned.iter().map(|c| c.as_slice()).collect();

    let (emb_kept, importances) = embedded_select(&xtr, &ytr, th.t_embedded, cfg)?;
    let emb_set: HashSet<usize> = emb_kept.iter().copied().collect();
    report.embedded = filter_kept
        .iter()
        .enumerate()
        .map(|(pos, &j)| StageEntry { name: x.names[j].clone(), value: importances[pos], kept: emb_set.contains(&pos) })
        .collect();

    let mut order = emb_kept;
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    report.order = order.iter().map(|&pos| x.names[filter_kept[pos]].clone()).collect();

    let (accepted, mut steps, trajectory) = wrapper_select(&xtr, &ytr, &xva, &yva, &order, th.t_wrapper, cfg)?;
    for (step, &pos) in steps.iter_mut().zip(&order) {
        step.name = x.names[filter_kept[pos]].clone();
    }
    let deltas: Vec<(usize, f64)> = order.iter().zip(&steps).map(|(&p, s)| (p, s.delta)).collect();
    report.wrapper = steps;
    report.final_score = *trajectory.last().expect("starts with the empty score");
    report.trajectory = trajectory;

    let selected = accepted
        .iter()
        .map(|&pos| {
            let j = filter_kept[pos];
            let delta = deltas.iter().find(|(p, _)| *p == pos).map_or(0.0, |d| d.1);
            Selected { index: j, name: x.names[j].clone(), variance: variances[j], importance: importances[pos], wrapper_delta: delta }
        })
        .collect();
    Ok((selected, report))
}

/// Concatenate task outputs in order, keeping the first column of each name.
pub fn merge_candidates(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
    let n_rows = parts.first().map_or(0, |p| p.n_rows);
    let mut out = FeatureMatrix::empty(n_rows);
    let mut seen = HashSet::new();
    for part in parts {
        if part.n_rows != n_rows {
            return Err(Error::invalid("task outputs cover different row counts"));
        }
        for j in 0..part.n_cols() {
            if seen.insert(part.names[j].clone()) {
                out.names.push(part.names[j].clone());
                out.columns.push(part.columns[j].clone());
                out.missing.push(part.missing[j].clone());
            }
        }
    }
    Ok(out)
}

/// Merge the task outputs (in task order) and run the cascade over the union.
pub fn global_select(
    parts: &[&FeatureMatrix],
    labels: &[u8],
    th: &SelectionThresholds,
    cfg: &GbdtConfig,
    seed: u64,
) -> Result<(FeatureMatrix, Vec<Selected>, SelectionReport)> {
    let merged = merge_candidates(parts)?;
    let (selected, report) = fsa(&merged, labels, th, cfg, seed)?;
    Ok((merged, selected, report))
}
