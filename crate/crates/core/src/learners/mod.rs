//! Learners used for selection, evaluation and baselines.

pub mod fm;
pub mod gbdt;
pub mod lr;
pub mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub use fm::{train_fm, FmConfig, FmModel};
pub use gbdt::{train_gbdt, GbdtConfig, GbdtModel};
pub use lr::{train_lr, LrConfig, LrModel};
pub use metrics::{auc, rela_impr};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Validates a column-major design matrix and binary labels; returns the row count.
pub(crate) fn check_inputs(columns: &[&[f64]], labels: &[u8]) -> Result<usize> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("empty training data"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    for (j, col) in columns.iter().enumerate() {
        if col.len() != n {
            return Err(Error::invalid(format!("column {j} has {} rows, expected {n}", col.len())));
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("column {j} has non-finite values")));
        }
    }
    Ok(n)
}

/// Dense one-hot encoding of every categorical field, one column per code.
pub fn one_hot(d: &Dataset) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for f in 0..d.n_fields() {
        let codes = d.codes(f);
        for c in 0..d.cardinality(f) as u32 {
            out.push(codes.iter().map(|&x| (x == c) as u8 as f64).collect());
        }
    }
    out
}

/// Borrow owned columns as slices.
pub fn as_slices(columns: &[Vec<f64>]) -> Vec<&[f64]> {
    columns.iter().map(|c| c.as_slice()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Lr,
    Gbdt,
    Fm,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(LearnerKind::Lr),
            "gbdt" => Ok(LearnerKind::Gbdt),
            "fm" => Ok(LearnerKind::Fm),
            other => Err(Error::config(format!("unknown learner `{other}`"))),
        }
    }
}

/// A trained model of any kind, with the feature names it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Lr { features: Vec<String>, model: LrModel },
    Gbdt { features: Vec<String>, model: GbdtModel },
    Fm { model: FmModel },
}

impl TrainedModel {
    pub fn kind(&self) -> LearnerKind {
        match self {
            TrainedModel::Lr { .. } => LearnerKind::Lr,
            TrainedModel::Gbdt { .. } => LearnerKind::Gbdt,
            TrainedModel::Fm { .. } => LearnerKind::Fm,
        }
    }

    /// Normalized importances; LR uses absolute standardized weights.
    pub fn importances(&self) -> Vec<f64> {
        match self {
            TrainedModel::Gbdt { model, .. } => model.importances.clone(),
            TrainedModel::Lr { model, .. } => {
                let abs: Vec<f64> = model.weights.iter().map(|w| w.abs()).collect();
                let total: f64 = abs.iter().sum();
                if total > 0.0 { abs.iter().map(|w| w / total).collect() } else { abs }
            }
            TrainedModel::Fm { model } => {
                let abs: Vec<f64> = model.weights.iter().map(|w| w.abs()).collect();
                let total: f64 = abs.iter().sum();
                if total > 0.0 { abs.iter().map(|w| w / total).collect() } else { abs }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn check_inputs_rejects_bad_shapes() {
        assert!(check_inputs(&[&[1.0]], &[]).is_err());
        assert!(check_inputs(&[&[1.0, 2.0]], &[1]).is_err());
        assert!(check_inputs(&[&[1.0]], &[2]).is_err());
        assert!(check_inputs(&[&[f64::INFINITY]], &[1]).is_err());
        assert_eq!(check_inputs(&[&[1.0, 2.0]], &[0, 1]).unwrap(), 2);
    }

    #[test]
    fn model_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<u8> = (0..100).map(|i| (i > 40) as u8).collect();
        let model = train_gbdt(&[&x], &y, &GbdtConfig { n_trees: 3, ..Default::default() }).unwrap();
        let tm = TrainedModel::Gbdt { features: vec!["x".into()], model };
        let p = dir.path().join("m.json");
        tm.save(&p).unwrap();
        assert_eq!(TrainedModel::load(&p).unwrap(), tm);
        assert_eq!(tm.kind(), LearnerKind::Gbdt);
    }
}
