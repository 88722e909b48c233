//! End-to-end orchestration: configuration, task planning, parallel search,
//! global selection, templates, transformation and final training.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Operator;
use crate::analysis::AnalysisConfig;
use crate::construct::{
    apply_template, count_search_space, ExpansionConfig, FeatureMatrix, FeatureTemplate, Paradigm, SearchSpace,
    ENGINE_VERSION,
};
use crate::dataset::{split_indices, Dataset, Indicator, LoadOptions, Schema};
use crate::error::{Error, Result};
use crate::learners::{
    as_slices, auc, rela_impr, train_gbdt, train_lr, GbdtConfig, LearnerKind, LrConfig, TrainedModel,
};
use crate::search::{run_task, IterationRecord, PairMatrix, SearchConfig, Task, TaskContext, TaskResult};
use crate::selection::{fsa_on_split, merge_candidates, selection_learner, SelectionReport, SelectionThresholds};

pub const TEMPLATE_FILE: &str = "template.json";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { path: None, delimiter: ',', has_header: true }
    }
}

impl DataConfig {
    pub fn load_options(&self) -> Result<LoadOptions> {
        if !self.delimiter.is_ascii() {
            return Err(Error::config("delimiter must be a single ASCII character"));
        }
        Ok(LoadOptions { delimiter: self.delimiter as u8, has_header: self.has_header })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Window lengths in `window_unit`s.
    pub windows: Vec<i64>,
    /// Timestamp units per window unit (86400 for days over seconds).
    pub window_unit: i64,
    /// Also expand the unwindowed variant.
    pub unwindowed: bool,
    pub operators: Vec<Operator>,
    pub paradigms: Vec<Paradigm>,
    pub window_open_lower: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            windows: vec![3, 5, 7, 14],
            window_unit: 86_400,
            unwindowed: false,
            operators: Operator::ALL.to_vec(),
            paradigms: Paradigm::ALL.to_vec(),
            window_open_lower: false,
        }
    }
}

impl FeatureConfig {
    pub fn expansion(&self) -> ExpansionConfig {
        let mut windows: Vec<Option<i64>> = self.windows.iter().map(|&w| Some(w * self.window_unit)).collect();
        if self.unwindowed {
            windows.push(None);
        }
        ExpansionConfig { windows, paradigms: self.paradigms.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub rate: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { rate: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learner: LearnerKind,
    /// Rows with timestamp at or after this go to the test set.
    pub test_cutoff: Option<i64>,
    /// Random test fraction when no cutoff is given.
    pub test_rate: f64,
    pub rate_valid: f64,
    pub baseline_auc: Option<f64>,
    pub seed: u64,
    pub lr: LrConfig,
    pub gbdt: GbdtConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learner: LearnerKind::Lr,
            test_cutoff: None,
            test_rate: 0.2,
            rate_valid: 0.2,
            baseline_auc: None,
            seed: 0,
            lr: LrConfig::default(),
            gbdt: GbdtConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub parallelism: usize,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, parallelism: 1, out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    pub schema: Schema,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub selection: SelectionThresholds,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "selection_learner")]
    pub learner: GbdtConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn new(schema: Schema) -> Self {
        RunConfig {
            data: DataConfig::default(),
            schema,
            features: FeatureConfig::default(),
            sampling: SamplingConfig::default(),
            selection: SelectionThresholds::default(),
            search: SearchConfig::default(),
            learner: selection_learner(),
            train: TrainConfig::default(),
            run: RunSection::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str::<toml::Table>(text).map(toml::Value::Table).map_err(|e| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        // relative data paths are resolved against the config file
        if let (Some(p), Some(dir)) = (&cfg.data.path, path.parent()) {
            if p.is_relative() {
                cfg.data.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate().map_err(|e| Error::config(e.to_string()))?;
        let f = &self.features;
        if f.windows.is_empty() && !f.unwindowed {
            return Err(Error::config("no windows configured; list windows or set unwindowed = true"));
        }
        if f.windows.iter().any(|&w| w <= 0) || f.window_unit <= 0 {
            return Err(Error::config("windows must be positive"));
        }
        if !f.windows.is_empty() && self.schema.timestamp.is_none() {
            return Err(Error::config("windows need a timestamp column in the schema"));
        }
        if f.operators.is_empty() {
            return Err(Error::config("operator set is empty"));
        }
        if f.paradigms.is_empty() {
            return Err(Error::config("paradigm set is empty"));
        }
        if !(self.sampling.rate > 0.0 && self.sampling.rate <= 1.0) {
            return Err(Error::config(format!("sampling rate must be in (0, 1], got {}", self.sampling.rate)));
        }
        if self.run.parallelism == 0 {
            return Err(Error::config("parallelism must be at least 1"));
        }
        if self.search.k_latent == 0 {
            return Err(Error::config("k_latent must be at least 1"));
        }
        if !(self.train.test_rate > 0.0 && self.train.test_rate < 1.0) {
            return Err(Error::config("train.test_rate must lie in (0, 1)"));
        }
        self.selection.validate()?;
        self.plan_tasks().map(|_| ())
    }

    /// Compatible (indicator, operator) combinations with per-task seeds.
    pub fn plan_tasks(&self) -> Result<Vec<Task>> {
        let indicators = self.schema.indicator_set().map_err(|e| Error::config(e.to_string()))?;
        plan_tasks(&indicators, &self.features.operators, self.run.seed)
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        let indicators = self.schema.indicator_set().map_err(|e| Error::config(e.to_string()))?;
        Ok(count_search_space(self.schema.n_fields(), &indicators, &self.features.operators, &self.features.expansion()))
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let path = self.data.path.as_ref().ok_or_else(|| Error::config("data.path is not set"))?;
        Dataset::load(path, &self.schema, self.data.load_options()?)
    }
}

/// Set `a.b.c = v` in a TOML document; `v` is parsed as a TOML value and
/// falls back to a plain string.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{key}`")));
    }
    let mut cur = doc;
    for part in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| Error::config(format!("`{key}` crosses a non-table value")))?;
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur.as_table_mut().ok_or_else(|| Error::config(format!("`{key}` crosses a non-table value")))?;
    table.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

fn task_seed(run_seed: u64, id: usize) -> u64 {
    run_seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The cartesian product of indicators and operators minus incompatible
/// combinations, in (indicator, operator) order.
pub fn plan_tasks(indicators: &[Indicator], operators: &[Operator], seed: u64) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for &indicator in indicators {
        for &operator in operators {
            if operator.applies_to(indicator) && !tasks.iter().any(|t: &Task| t.indicator == indicator && t.operator == operator) {
                let id = tasks.len();
                tasks.push(Task { id, indicator, operator, seed: task_seed(seed, id) });
            }
        }
    }
    if tasks.is_empty() {
        return Err(Error::config("no compatible (indicator, operator) combination"));
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub id: usize,
    pub name: String,
    pub seed: u64,
    pub stopped_early: bool,
    pub accepted: Vec<String>,
    pub initial_matrix: PairMatrix,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub fingerprint: String,
    pub field_names: Vec<String>,
    pub n_rows: usize,
    pub n_sampled: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub search_space: SearchSpace,
    pub tasks: Vec<TaskReport>,
    pub n_merged: usize,
    pub global: SelectionReport,
    pub features: Vec<String>,
}

impl RunReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

struct Stopwatch {
    timings: Vec<Timing>,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch { timings: Vec::new(), last: Instant::now() }
    }

    fn lap(&mut self, stage: &str) {
        let seconds = self.last.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.3}s");
        self.timings.push(Timing { stage: stage.to_owned(), seconds });
        self.last = Instant::now();
    }
}

/// Everything a search run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub template: FeatureTemplate,
    pub report: RunReport,
    pub timings: Vec<Timing>,
    pub tasks: Vec<TaskResult>,
}

impl RunOutput {
    /// Write the template, report and timings into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        self.template.save(dir.join(TEMPLATE_FILE))?;
        self.report.save(dir.join(REPORT_FILE))?;
        write_json(&dir.join(TIMINGS_FILE), &self.timings)
    }
}

/// Load the configured data and search it.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let full = cfg.load_data()?;
    log::info!("load: {:.3}s ({} rows)", start.elapsed().as_secs_f64(), full.n_rows());
    run_on(&full, cfg)
}

/// Sample, search every task in parallel, merge, select globally and build
/// the template.
pub fn run_on(full: &Dataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if full.schema() != &cfg.schema {
        return Err(Error::config("dataset schema differs from the configured schema"));
    }
    let mut watch = Stopwatch::new();
    let tasks = cfg.plan_tasks()?;
    let expansion = cfg.features.expansion();
    let sampled = full.sample(cfg.sampling.rate, cfg.sampling.seed)?;
    let (train, valid) = split_indices(sampled.n_rows(), cfg.selection.rate_valid, cfg.run.seed)?;
    watch.lap("sample");

    let ctx = TaskContext {
        search: &cfg.search,
        expansion: &expansion,
        thresholds: &cfg.selection,
        learner: &cfg.learner,
        window_open_lower: cfg.features.window_open_lower,
        train: &train,
        valid: &valid,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<TaskResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&task| {
                run_task(&sampled, task, &ctx)
                    .map_err(|e| Error::Task { task: task.name(&sampled), source: Box::new(e) })
            })
            .collect::<Result<_>>()
    })?;
    watch.lap("search");

    let parts: Vec<FeatureMatrix> = results.iter().map(|r| r.matrix(sampled.n_rows())).collect();
    let part_refs: Vec<&FeatureMatrix> = parts.iter().collect();
    let merged = merge_candidates(&part_refs)?;
    let (selected, global) = pool.install(|| {
        fsa_on_split(&merged, sampled.labels(), &train, &valid, &cfg.selection, &cfg.learner)
    })?;
    watch.lap("global selection");

    let mut by_name = HashMap::new();
    for r in &results {
        for a in &r.accepted {
            by_name.entry(a.name.as_str()).or_insert(a);
        }
    }
    let mut template = FeatureTemplate::new(full.fingerprint(), cfg.features.window_open_lower);
    for s in &selected {
        let a = by_name[s.name.as_str()];
        template.push(full.schema(), a.spec, a.imputation, Some(a.provenance.clone()))?;
    }
    watch.lap("template");

    let report = RunReport {
        version: ENGINE_VERSION.to_owned(),
        fingerprint: template.fingerprint.clone(),
        field_names: full.schema().categorical.clone(),
        n_rows: full.n_rows(),
        n_sampled: sampled.n_rows(),
        n_train: train.len(),
        n_valid: valid.len(),
        search_space: cfg.search_space()?,
        tasks: results
            .iter()
            .map(|r| TaskReport {
                id: r.task.id,
                name: r.name.clone(),
                seed: r.task.seed,
                stopped_early: r.stopped_early,
                accepted: r.accepted.iter().map(|a| a.name.clone()).collect(),
                initial_matrix: r.initial_matrix.clone(),
                history: r.history.clone(),
            })
            .collect(),
        n_merged: merged.n_cols(),
        global,
        features: template.names(),
    };
    Ok(RunOutput { template, report, timings: watch.timings, tasks: results })
}

/// Apply a saved template to the full data.
pub fn transform(full: &Dataset, template_path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let template = FeatureTemplate::load(template_path)?;
    apply_template(full, &template)
}

/// Raw one-hot encoding of every categorical field, named `field=value`.
pub fn one_hot_features(d: &Dataset) -> FeatureMatrix {
    let mut fm = FeatureMatrix::empty(d.n_rows());
    for f in 0..d.n_fields() {
        let dict = d.dictionary(f);
        let codes = d.codes(f);
        for c in 0..dict.len() as u32 {
            let value = dict.decode(c).unwrap_or_default();
            fm.names.push(format!("{}={}", d.schema().categorical[f], value));
            fm.columns.push(codes.iter().map(|&x| (x == c) as u8 as f64).collect());
            fm.missing.push(vec![false; d.n_rows()]);
        }
    }
    fm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub learner: LearnerKind,
    pub n_features: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub auc_train: f64,
    pub auc_valid: f64,
    pub auc_test: f64,
    pub baseline_auc: Option<f64>,
    /// Percent relative improvement of the test AUC over the baseline.
    pub rela_impr: Option<f64>,
    pub importances: Vec<(String, f64)>,
}

/// Train/validation/test row indices for the final model.
pub fn final_split(d: &Dataset, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n = d.n_rows();
    let (rest, test): (Vec<usize>, Vec<usize>) = match cfg.test_cutoff {
        Some(cut) => {
            let ts = d.timestamps().ok_or_else(|| Error::config("test_cutoff needs a timestamp column"))?;
            (0..n).partition(|&r| ts[r] < cut)
        }
        None => split_indices(n, cfg.test_rate, cfg.seed ^ 0x7E57)?,
    };
    if rest.is_empty() || test.is_empty() {
        return Err(Error::invalid("test split leaves an empty partition"));
    }
    let (tr, va) = split_indices(rest.len(), cfg.rate_valid, cfg.seed)?;
    Ok((tr.iter().map(|&i| rest[i]).collect(), va.iter().map(|&i| rest[i]).collect(), test))
}

fn columns_at(x: &FeatureMatrix, rows: &[usize]) -> Vec<Vec<f64>> {
    x.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect()
}

/// Train the configured learner on `features` and score every split.
pub fn train_and_evaluate(features: &FeatureMatrix, d: &Dataset, cfg: &TrainConfig) -> Result<(TrainedModel, EvalReport)> {
    if features.n_rows != d.n_rows() {
        return Err(Error::Schema(format!("features have {} rows, data has {}", features.n_rows, d.n_rows())));
    }
    if features.n_cols() == 0 {
        return Err(Error::invalid("no feature columns to train on"));
    }
    let (train, valid, test) = final_split(d, cfg)?;
    let labels = d.labels();
    let y = |rows: &[usize]| rows.iter().map(|&r| labels[r]).collect::<Vec<u8>>();
    let (ytr, yva, yte) = (y(&train), y(&valid), y(&test));
    let (xtr, xva, xte) = (columns_at(features, &train), columns_at(features, &valid), columns_at(features, &test));
    let (str_, sva, ste) = (as_slices(&xtr), as_slices(&xva), as_slices(&xte));
    let names = features.names.clone();
    let (model, scores): (TrainedModel, [Vec<f64>; 3]) = match cfg.learner {
        LearnerKind::Lr => {
            let m = train_lr(&str_, &ytr, &LrConfig { seed: cfg.seed, ..cfg.lr.clone() })?;
            let s = [m.predict_proba(&str_), m.predict_proba(&sva), m.predict_proba(&ste)];
            (TrainedModel::Lr { features: names.clone(), model: m }, s)
        }
        LearnerKind::Gbdt => {
            let m = train_gbdt(&str_, &ytr, &cfg.gbdt)?;
            let s = [m.predict_proba(&str_), m.predict_proba(&sva), m.predict_proba(&ste)];
            (TrainedModel::Gbdt { features: names.clone(), model: m }, s)
        }
        LearnerKind::Fm => return Err(Error::config("the fm learner trains on raw fields; use lr or gbdt")),
    };
    let auc_test = auc(&yte, &scores[2])?;
    let rela = cfg.baseline_auc.map(|b| rela_impr(auc_test, b)).transpose()?;
    let importances = names.into_iter().zip(model.importances()).collect();
    let report = EvalReport {
        learner: cfg.learner,
        n_features: features.n_cols(),
        n_train: train.len(),
        n_valid: valid.len(),
        n_test: test.len(),
        auc_train: auc(&ytr, &scores[0])?,
        auc_valid: auc(&yva, &scores[1])?,
        auc_test,
        baseline_auc: cfg.baseline_auc,
        rela_impr: rela,
        importances,
    };
    Ok((model, report))
}

/// Persist a trained model and its metrics into `dir`.
pub fn save_training(dir: impl AsRef<Path>, model: &TrainedModel, report: &EvalReport) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    model.save(dir.join(MODEL_FILE))?;
    write_json(&dir.join(METRICS_FILE), report)
}
