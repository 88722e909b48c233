//! Interpretability and sampling-study outputs.
//!
//! Combination-strength matrices attribute model weight to field pairs,
//! either from constructed-feature importances or from factorization machine
//! mean embeddings. The DoWG study measures how well importance gaps found
//! on sampled data match those found on the full data.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Targets;
use crate::construct::{apply_template, imputation_mean, impute, materialize, FeatureSpec, FeatureTemplate};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{as_slices, train_fm, train_gbdt, FmConfig, FmModel, GbdtConfig};
use crate::pipeline::{EvalReport, RunConfig, RunReport, TaskReport};

pub const DOWG_EPSILON: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsMethod {
    Importance,
    Fm,
}

impl CsMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CsMethod::Importance => "importance",
            CsMethod::Fm => "fm",
        }
    }
}

/// Symmetric field-by-field combination strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsMatrix {
    pub method: CsMethod,
    pub fields: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Weight of single-field features, which belong to no pair.
    pub single: Vec<f64>,
}

impl CsMatrix {
    pub fn zeros(method: CsMethod, fields: Vec<String>) -> Self {
        let m = fields.len();
        CsMatrix { method, fields, values: vec![vec![0.0; m]; m], single: vec![0.0; m] }
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    /// Sum over the upper triangle plus the single-field weights.
    pub fn total(&self) -> f64 {
        let m = self.m();
        let pairs: f64 = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).sum();
        pairs + self.single.iter().sum::<f64>()
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.m();
        (0..m).all(|i| (0..m).all(|j| self.values[i][j] == self.values[j][i]))
    }

    /// Fraction of off-diagonal cells below 10% of the largest one.
    pub fn sparsity(&self) -> f64 {
        let m = self.m();
        let cells: Vec<f64> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).collect();
        if cells.is_empty() {
            return 0.0;
        }
        let max = cells.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return 1.0;
        }
        cells.iter().filter(|&&c| c < 0.1 * max).count() as f64 / cells.len() as f64
    }

    /// Delimited matrix with a header row of field names.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("field");
        for f in &self.fields {
            write!(s, ",{f}").unwrap();
        }
        s.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            s.push_str(&self.fields[i]);
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn single_csv(&self) -> String {
        let mut s = String::from("field,weight\n");
        for (f, w) in self.fields.iter().zip(&self.single) {
            writeln!(s, "{f},{w}").unwrap();
        }
        s
    }
}

/// Accumulate each feature's importance onto its field pair.
///
/// `feature_names` are the model's columns in order; they must match the
/// template's features.
pub fn cs_importance(
    importances: &[f64],
    feature_names: &[String],
    template: &FeatureTemplate,
    fields: Vec<String>,
) -> Result<CsMatrix> {
    if importances.len() != feature_names.len() {
        return Err(Error::invalid("importance and feature-name counts differ"));
    }
    let mut cs = CsMatrix::zeros(CsMethod::Importance, fields);
    for (name, &w) in feature_names.iter().zip(importances) {
        let feature = template
            .features
            .iter()
            .find(|f| &f.name == name)
            .ok_or_else(|| Error::invalid(format!("model feature `{name}` is not in the template")))?;
        match feature.spec.field_pair() {
            Some((p, q)) => {
                cs.values[p][q] += w;
                cs.values[q][p] += w;
            }
            None => cs.single[feature.spec.p] += w,
        }
    }
    Ok(cs)
}

/// `|m_i . m_j|` off the diagonal for per-field mean embeddings `m`.
pub fn cs_from_mean_embeddings(means: &[Vec<f64>], fields: Vec<String>) -> CsMatrix {
    let mut cs = CsMatrix::zeros(CsMethod::Fm, fields);
    let m = means.len();
    for i in 0..m {
        for j in i + 1..m {
            let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| a * b).sum();
            cs.values[i][j] = d.abs();
            cs.values[j][i] = d.abs();
        }
    }
    cs
}

pub fn field_mean_embeddings(fm: &FmModel) -> Vec<Vec<f64>> {
    let k = fm.config.k_emb;
    fm.offsets
        .iter()
        .zip(&fm.cardinalities)
        .map(|(&off, &card)| {
            let mut mean = vec![0.0; k];
            for c in 0..card {
                for (acc, v) in mean.iter_mut().zip(fm.embedding(off + c)) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|x| *x /= card.max(1) as f64);
            mean
        })
        .collect()
}

pub fn cs_fm(fm: &FmModel, fields: Vec<String>) -> Result<CsMatrix> {
    if fields.len() != fm.offsets.len() {
        return Err(Error::invalid("field names do not match the model"));
    }
    Ok(cs_from_mean_embeddings(&field_mean_embeddings(fm), fields))
}

/// Deviation of the importance gap between features `i` and `j` at a sampled
/// rate from the full-data gap. The denominator keeps its sign.
pub fn dowg(ws_i: f64, ws_j: f64, w1_i: f64, w1_j: f64) -> f64 {
    (((ws_i - ws_j).abs() - (w1_i - w1_j).abs()) / (w1_i - w1_j + DOWG_EPSILON)).abs()
}

/// DoWG for every listed index pair.
pub fn dowg_pairs(weights_s: &[f64], weights_full: &[f64], pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    if weights_s.len() != weights_full.len() {
        return Err(Error::invalid("weight vectors cover different features"));
    }
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= weights_s.len() || j >= weights_s.len() {
                return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
            }
            Ok(dowg(weights_s[i], weights_s[j], weights_full[i], weights_full[j]))
        })
        .collect()
}

/// Indices of the first, the two trisection points and the last feature in
/// descending importance order.
pub fn quartile_features(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let n = order.len();
    if n == 0 {
        return Vec::new();
    }
    let last = n - 1;
    let mut picks = vec![order[0], order[(last as f64 / 3.0).round() as usize], order[(2.0 * last as f64 / 3.0).round() as usize], order[last]];
    picks.dedup();
    picks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DowgConfig {
    pub rates: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub learner: GbdtConfig,
}

impl Default for DowgConfig {
    fn default() -> Self {
        DowgConfig { rates: vec![0.05, 0.1, 0.25, 0.5, 1.0], repeats: 10, seed: 0, learner: GbdtConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowgRow {
    pub rate: f64,
    pub repeat: usize,
    /// Feature indices (into the studied spec list).
    pub pair: (usize, usize),
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowgStudy {
    pub features: Vec<String>,
    pub full_importances: Vec<f64>,
    /// F1..F4 as indices into `features`.
    pub picked: Vec<usize>,
    pub rows: Vec<DowgRow>,
}

fn importances_on(d: &Dataset, specs: &[FeatureSpec], open_lower: bool, learner: &GbdtConfig) -> Result<Vec<f64>> {
    let cols: Vec<Vec<f64>> = specs
        .par_iter()
        .map(|s| {
            let mut v = materialize(d, Targets::Reference, s, open_lower)?.values;
            let fill = imputation_mean(&v, None);
            impute(&mut v, fill);
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(train_gbdt(&as_slices(&cols), d.labels(), learner)?.importances)
}

impl DowgStudy {
    /// Median DoWG of the listed pair at each rate, in rate order.
    pub fn medians(&self, pair: (usize, usize)) -> Vec<(f64, f64)> {
        let mut rates: Vec<f64> = self.rows.iter().map(|r| r.rate).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        rates
            .into_iter()
            .map(|rate| {
                let mut vals: Vec<f64> =
                    self.rows.iter().filter(|r| r.rate == rate && r.pair == pair).map(|r| r.value).collect();
                vals.sort_by(f64::total_cmp);
                (rate, median(&vals))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rate,repeat,feature_i,feature_j,dowg\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.rate, r.repeat, self.features[r.pair.0], self.features[r.pair.1], r.value).unwrap();
        }
        s
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

/// Train on the full data and on repeated samples at each rate; report DoWG
/// for every pair among F1..F4.
pub fn dowg_study(d: &Dataset, specs: &[FeatureSpec], open_lower: bool, cfg: &DowgConfig) -> Result<DowgStudy> {
    if specs.len() < 2 {
        return Err(Error::invalid("the sampling study needs at least two features"));
    }
    let full = importances_on(d, specs, open_lower, &cfg.learner)?;
    let picked = quartile_features(&full);
    let pairs: Vec<(usize, usize)> =
        (0..picked.len()).flat_map(|a| (a + 1..picked.len()).map(move |b| (a, b))).map(|(a, b)| (picked[a], picked[b])).collect();
    let mut rows = Vec::new();
    for (ri, &rate) in cfg.rates.iter().enumerate() {
        for repeat in 0..cfg.repeats {
            let seed = cfg.seed ^ ((ri as u64) << 32 | repeat as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
            let sample = d.sample(rate, seed)?;
            let ws = importances_on(&sample, specs, open_lower, &cfg.learner)?;
            for (&pair, value) in pairs.iter().zip(dowg_pairs(&ws, &full, &pairs)?) {
                rows.push(DowgRow { rate, repeat, pair, value });
            }
        }
    }
    Ok(DowgStudy { features: specs.iter().map(|s| s.canonical_name(d.schema())).collect(), full_importances: full, picked, rows })
}

/// Count of adjacent increases in a sequence that should not increase.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

/// AUC-vs-iteration series for every task, early-stop point marked.
pub fn curves_csv(report: &RunReport) -> String {
    curves_csv_for(&report.tasks)
}

fn curves_csv_for(tasks: &[TaskReport]) -> String {
    let mut s = String::from("task,iteration,field_i,field_j,n_fg,n_valid,p_dot,score,score_max,early_stop\n");
    for t in tasks {
        let last = t.history.len();
        for h in &t.history {
            let stop = t.stopped_early && h.iteration == last;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                t.name, h.iteration, h.pair_names.0, h.pair_names.1, h.n_fg, h.n_valid, h.p_dot, h.score, h.score_max, stop as u8
            )
            .unwrap();
        }
    }
    s
}

pub fn rela_impr_csv(rows: &[(String, EvalReport)]) -> String {
    let mut s = String::from("model,auc_test,baseline_auc,rela_impr_percent\n");
    for (name, r) in rows {
        let base = r.baseline_auc.map_or(String::new(), |b| b.to_string());
        let rel = r.rela_impr.map_or(String::new(), |v| format!("{v:.2}"));
        writeln!(s, "{name},{},{base},{rel}", r.auc_test).unwrap();
    }
    s
}

/// Everything `emit_reports` can render; absent parts are skipped.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub report: Option<RunReport>,
    pub cs: Vec<CsMatrix>,
    pub dowg: Option<DowgStudy>,
    pub evaluations: Vec<(String, EvalReport)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub fm: FmConfig,
    /// Run the sampling study (trains one model per rate and repeat).
    pub dowg: bool,
    pub dowg_study: DowgConfig,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::file(&path, e))
}

/// Write plot-ready delimited files into `dir`; returns the file names.
pub fn emit_reports(artifacts: &Artifacts, dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        write(dir, &name, &text)?;
        written.push(name);
        Ok(())
    };
    let curves = artifacts.report.as_ref().map_or_else(|| curves_csv_for(&[]), curves_csv);
    emit("curves.csv".into(), curves)?;
    let mut summary = String::from("method,sparsity,total\n");
    for cs in &artifacts.cs {
        emit(format!("cs_{}.csv", cs.method.as_str()), cs.to_csv())?;
        if cs.method == CsMethod::Importance {
            emit("cs_importance_single.csv".into(), cs.single_csv())?;
        }
        writeln!(summary, "{},{},{}", cs.method.as_str(), cs.sparsity(), cs.total()).unwrap();
    }
    if !artifacts.cs.is_empty() {
        emit("cs_summary.csv".into(), summary)?;
    }
    if let Some(study) = &artifacts.dowg {
        emit("dowg.csv".into(), study.to_csv())?;
    }
    if !artifacts.evaluations.is_empty() {
        emit("rela_impr.csv".into(), rela_impr_csv(&artifacts.evaluations))?;
    }
    Ok(written)
}

/// Combination strength from both learners, plus the sampling study when
/// enabled, for a searched template applied to `full`.
pub fn analyze(
    full: &Dataset,
    cfg: &RunConfig,
    template: &FeatureTemplate,
    report: Option<RunReport>,
    evaluations: Vec<(String, EvalReport)>,
) -> Result<Artifacts> {
    let fields = full.schema().categorical.clone();
    let features = apply_template(full, template)?;
    let importance = if features.n_cols() == 0 {
        CsMatrix::zeros(CsMethod::Importance, fields.clone())
    } else {
        let model = train_gbdt(&as_slices(&features.columns), full.labels(), &cfg.train.gbdt)?;
        cs_importance(&model.importances, &features.names, template, fields.clone())?
    };
    let fm = train_fm(full, &cfg.analysis.fm)?;
    let cs = vec![importance, cs_fm(&fm, fields)?];
    let dowg = if cfg.analysis.dowg && template.features.len() >= 2 {
        let specs: Vec<FeatureSpec> = template.features.iter().map(|f| f.spec).collect();
        Some(dowg_study(full, &specs, template.window_open_lower, &cfg.analysis.dowg_study)?)
    } else {
        None
    };
    Ok(Artifacts { report, cs, dowg, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Operator;
    use crate::construct::Paradigm;
    use crate::dataset::{Indicator, Schema};
    use crate::synth::{planted, PlantedConfig, DAY};

    fn fields(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("f{i}")).collect()
    }

    fn template_with(specs: &[FeatureSpec], schema: &Schema) -> FeatureTemplate {
        let mut t = FeatureTemplate::new("x".into(), false);
        for s in specs {
            t.push(schema, *s, 0.0, None).unwrap();
        }
        t
    }

    #[test]
    fn cs_importance_examples() {
        let schema = Schema::new(fields(4), "y");
        let a = FeatureSpec::pair(1, 2, Indicator::Label, Operator::Mean, None);
        let b = FeatureSpec::ratio(1, 2, 1, Indicator::Label, Operator::Mean, None);
        let c = FeatureSpec::pair(0, 3, Indicator::Label, Operator::Sum, None);
        let s = FeatureSpec::single(3, Indicator::Label, Operator::Sum, None);
        let t = template_with(&[a, b], &schema);
        let cs = cs_importance(&[0.6, 0.4], &t.names(), &t, fields(4)).unwrap();
        assert!((cs.values[1][2] - 1.0).abs() < 1e-12);
        assert_eq!(cs.values.iter().flatten().filter(|&&v| v != 0.0).count(), 2);

        let t = template_with(&[a, c, s], &schema);
        let cs = cs_importance(&[0.6, 0.3, 0.1], &t.names(), &t, fields(4)).unwrap();
        assert_eq!((cs.values[1][2], cs.values[0][3], cs.single[3]), (0.6, 0.3, 0.1));
        assert!((cs.total() - 1.0).abs() < 1e-9);
        assert!(cs.is_symmetric());
        assert!(cs_importance(&[1.0], &["nope".into()], &t, fields(4)).is_err());

        let empty = template_with(&[], &schema);
        let cs = cs_importance(&[], &[], &empty, fields(4)).unwrap();
        assert_eq!(cs.total(), 0.0);
    }

    #[test]
    fn cs_fm_examples() {
        let cs = cs_from_mean_embeddings(&[vec![1.0, 0.0], vec![0.0, 2.0]], fields(2));
        assert_eq!(cs.values[0][1], 0.0);
        let cs = cs_from_mean_embeddings(&[vec![1.0, 0.0], vec![-0.5, 0.0]], fields(2));
        assert_eq!(cs.values[0][1], 0.5);
        let v = vec![0.3, -0.4];
        let cs = cs_from_mean_embeddings(&[v.clone(), v.clone()], fields(2));
        assert!((cs.values[0][1] - 0.25).abs() < 1e-12);
        assert_eq!(cs.values[0][0], 0.0);
    }

    #[test]
    fn cs_fm_is_symmetric_and_sign_invariant() {
        let d = planted(&PlantedConfig { n_rows: 3000, n_fields: 4, pair: Some((0, 2)), ..Default::default() }).unwrap();
        let mut fm = train_fm(&d, &FmConfig { epochs: 3, ..Default::default() }).unwrap();
        let cs = cs_fm(&fm, fields(4)).unwrap();
        assert!(cs.is_symmetric());
        fm.latent.iter_mut().for_each(|v| *v = -*v);
        assert_eq!(cs_fm(&fm, fields(4)).unwrap(), cs);
    }

    #[test]
    fn dowg_examples() {
        assert_eq!(dowg(0.4, 0.2, 0.4, 0.2), 0.0);
        assert!((dowg(0.5, 0.1, 0.4, 0.2) - 1.0).abs() < 1e-12);
        assert!(dowg(0.5, 0.1, 0.3, 0.3) > 1e20);
        // the denominator keeps its sign; the outer absolute value hides it
        assert_eq!(dowg(0.1, 0.5, 0.2, 0.4), dowg(0.5, 0.1, 0.4, 0.2));
        assert!(dowg_pairs(&[0.1], &[0.1, 0.2], &[(0, 1)]).is_err());
    }

    #[test]
    fn quartile_picks() {
        assert_eq!(quartile_features(&[0.1, 0.4, 0.2, 0.3]), vec![1, 3, 2, 0]);
        let w: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(quartile_features(&w), vec![9, 6, 3, 0]);
        assert_eq!(quartile_features(&[0.5, 0.5]), vec![0, 1]);
    }

    #[test]
    fn full_rate_study_is_exactly_zero() {
        let p = PlantedConfig { n_rows: 3000, n_fields: 4, pair: Some((0, 2)), ..Default::default() };
        let d = planted(&p).unwrap();
        let w = Some(3 * DAY);
        let specs = vec![
            FeatureSpec::pair(0, 2, Indicator::Label, Operator::Mean, w),
            FeatureSpec::single(0, Indicator::Label, Operator::Mean, w),
            FeatureSpec::pair(1, 3, Indicator::Label, Operator::Mean, w),
            FeatureSpec::single(1, Indicator::Unit, Operator::Count, w),
        ];
        let cfg = DowgConfig { rates: vec![1.0], repeats: 2, ..Default::default() };
        let study = dowg_study(&d, &specs, false, &cfg).unwrap();
        assert!(!study.rows.is_empty());
        assert!(study.rows.iter().all(|r| r.value == 0.0));
    }

    #[test]
    fn emit_is_deterministic_and_handles_empty_history() {
        let dir = tempfile::tempdir().unwrap();
        let cs = cs_from_mean_embeddings(&[vec![1.0], vec![0.5], vec![0.0]], fields(3));
        let art = Artifacts { cs: vec![cs], ..Default::default() };
        let names = emit_reports(&art, dir.path()).unwrap();
        assert!(names.contains(&"cs_fm.csv".to_string()));
        let first = std::fs::read_to_string(dir.path().join("cs_fm.csv")).unwrap();
        assert_eq!(first.lines().count(), 4);
        assert_eq!(first.lines().next().unwrap().split(',').count(), 4);
        emit_reports(&art, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("cs_fm.csv")).unwrap(), first);
        let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(curves.lines().count(), 1);
    }

    #[test]
    fn sparsity_counts_small_cells() {
        let mut cs = CsMatrix::zeros(CsMethod::Importance, fields(3));
        cs.values[0][1] = 1.0;
        cs.values[1][0] = 1.0;
        assert!((cs.sparsity() - 2.0 / 3.0).abs() < 1e-12);
        let _ = Paradigm::Pair;
    }
}
