//! Feature specifications, their materialization and reusable templates.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{ga, AggSpec, GroupKey, Operator, Targets, Window};
use crate::dataset::{Dataset, Indicator, Schema};
use crate::error::{Error, Result};

/// Denominators smaller than this in magnitude produce a missing ratio.
pub const RATIO_EPSILON: f64 = 1e-12;

pub const ENGINE_VERSION: &str = concat!("crossfeat-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Statistic over rows sharing one field value.
    Single,
    /// Statistic over rows sharing both field values.
    Pair,
    /// Pair statistic divided by a single-field statistic.
    Ratio,
    /// Statistic minus the row's own indicator value.
    Distance,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::Single, Paradigm::Pair, Paradigm::Ratio, Paradigm::Distance];

    pub fn as_str(&self) -> &'static str {
        match self {
            Paradigm::Single => "single",
            Paradigm::Pair => "pair",
            Paradigm::Ratio => "ratio",
            Paradigm::Distance => "distance",
        }
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown paradigm `{s}`")))
    }
}

/// Recipe for one constructed feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub paradigm: Paradigm,
    pub p: usize,
    #[serde(default)]
    pub q: Option<usize>,
    /// Denominator field of a ratio; one of `p`, `q`.
    #[serde(default)]
    pub base: Option<usize>,
    pub indicator: Indicator,
    pub operator: Operator,
    /// Window span in timestamp units; `None` aggregates all other rows.
    #[serde(default)]
    pub window: Option<i64>,
}

impl FeatureSpec {
    pub fn single(p: usize, indicator: Indicator, operator: Operator, window: Option<i64>) -> Self {
        FeatureSpec { paradigm: Paradigm::Single, p, q: None, base: None, indicator, operator, window }
    }

    pub fn pair(p: usize, q: usize, indicator: Indicator, operator: Operator, window: Option<i64>) -> Self {
        let (p, q) = (p.min(q), p.max(q));
        FeatureSpec { paradigm: Paradigm::Pair, p, q: Some(q), base: None, indicator, operator, window }
    }

    pub fn ratio(p: usize, q: usize, base: usize, indicator: Indicator, operator: Operator, window: Option<i64>) -> Self {
        let (p, q) = (p.min(q), p.max(q));
        FeatureSpec { paradigm: Paradigm::Ratio, p, q: Some(q), base: Some(base), indicator, operator, window }
    }

    pub fn distance(p: usize, q: Option<usize>, indicator: Indicator, operator: Operator, window: Option<i64>) -> Self {
        let (p, q) = match q {
            Some(q) => (p.min(q), Some(p.max(q))),
            None => (p, None),
        };
        FeatureSpec { paradigm: Paradigm::Distance, p, q, base: None, indicator, operator, window }
    }

    /// The unordered field pair this feature belongs to, if any.
    pub fn field_pair(&self) -> Option<(usize, usize)> {
        self.q.map(|q| (self.p, q))
    }

    fn key(&self) -> GroupKey {
        match self.q {
            Some(q) => GroupKey::Pair(self.p, q),
            None => GroupKey::Single(self.p),
        }
    }

    fn agg(&self, open_lower: bool) -> AggSpec {
        AggSpec {
            operator: self.operator,
            indicator: self.indicator,
            window: self.window.map(|span| Window { span, open_lower }),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let m = schema.n_fields();
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.p >= m || self.q.is_some_and(|q| q >= m) {
            return bad(format!("field index out of range in {self:?}"));
        }
        if let Some(q) = self.q {
            if q <= self.p {
                return bad(format!("pair fields must satisfy p < q, got ({}, {q})", self.p));
            }
        }
        if !self.operator.applies_to(self.indicator) {
            return bad(format!("operator {} does not apply to {:?}", self.operator, self.indicator));
        }
        if let Indicator::Continuous(i) = self.indicator {
            if i >= schema.continuous.len() {
                return bad(format!("continuous indicator {i} out of range"));
            }
        }
        if self.window.is_some_and(|w| w <= 0) {
            return bad("window span must be positive".into());
        }
        match self.paradigm {
            Paradigm::Single if self.q.is_some() || self.base.is_some() => bad("single-field feature with a second field".into()),
            Paradigm::Pair if self.q.is_none() || self.base.is_some() => bad("pair feature needs exactly two fields".into()),
            Paradigm::Ratio if self.q.is_none() || !(self.base == Some(self.p) || self.base == self.q) => {
                bad("ratio needs two fields and a denominator among them".into())
            }
            Paradigm::Distance if !self.indicator.is_per_row() => bad("distance needs a per-row indicator".into()),
            Paradigm::Distance if !matches!(self.operator, Operator::Mean | Operator::Max | Operator::Min) => {
                bad("distance supports mean, max and min".into())
            }
            Paradigm::Distance if self.base.is_some() => bad("distance feature with a denominator".into()),
            _ => Ok(()),
        }
    }

    /// Stable, human-readable name that parses back to the same spec.
    pub fn canonical_name(&self, schema: &Schema) -> String {
        let f = |i: usize| schema.categorical[i].as_str();
        let ind = schema.indicator_name(&self.indicator);
        let agg = |fields: &str| match self.window {
            Some(w) => format!("{}({ind})|{fields},W={w}", self.operator),
            None => format!("{}({ind})|{fields}", self.operator),
        };
        let both = || format!("{}&{}", f(self.p), f(self.q.unwrap_or(self.p)));
        match self.paradigm {
            Paradigm::Single => agg(f(self.p)),
            Paradigm::Pair => agg(&both()),
            Paradigm::Ratio => format!("ratio({} / {})", agg(&both()), agg(f(self.base.unwrap_or(self.p)))),
            Paradigm::Distance => {
                let key = if self.q.is_some() { both() } else { f(self.p).to_owned() };
                format!("dist({} - {ind})", agg(&key))
            }
        }
    }

    /// Inverse of [`FeatureSpec::canonical_name`].
    pub fn parse(name: &str, schema: &Schema) -> Result<Self> {
        let err = || Error::Template(format!("cannot parse feature name `{name}`"));
        let field = |s: &str| schema.field_index(s).ok_or_else(err);

        // `op(indicator)|F[&G][,W=n]`
        let parse_agg = |s: &str| -> Result<(Operator, Indicator, Vec<usize>, Option<i64>)> {
            let open = s.find('(').ok_or_else(err)?;
            let close = s.find(")|").ok_or_else(err)?;
            let op: Operator = s[..open].parse().map_err(|_| err())?;
            let ind = schema.indicator(&s[open + 1..close]).map_err(|_| err())?;
            let rest = &s[close + 2..];
            let (fields, window) = match rest.split_once(",W=") {
                Some((fs, w)) => (fs, Some(w.parse::<i64>().map_err(|_| err())?)),
                None => (rest, None),
            };
            let fields = fields.split('&').map(field).collect::<Result<Vec<_>>>()?;
            if fields.is_empty() || fields.len() > 2 {
                return Err(err());
            }
            Ok((op, ind, fields, window))
        };

        let spec = if let Some(inner) = name.strip_prefix("ratio(").and_then(|s| s.strip_suffix(')')) {
            let (num, den) = inner.split_once(" / ").ok_or_else(err)?;
            let (op, ind, fields, w) = parse_agg(num)?;
            let (op2, ind2, base, w2) = parse_agg(den)?;
            if fields.len() != 2 || base.len() != 1 || (op, ind, w) != (op2, ind2, w2) {
                return Err(err());
            }
            FeatureSpec::ratio(fields[0], fields[1], base[0], ind, op, w)
        } else if let Some(inner) = name.strip_prefix("dist(").and_then(|s| s.strip_suffix(')')) {
            let (agg, own) = inner.rsplit_once(" - ").ok_or_else(err)?;
            let (op, ind, fields, w) = parse_agg(agg)?;
            if schema.indicator(own).ok() != Some(ind) {
                return Err(err());
            }
            FeatureSpec::distance(fields[0], fields.get(1).copied(), ind, op, w)
        } else {
            let (op, ind, fields, w) = parse_agg(name)?;
            match fields[..] {
                [p] => FeatureSpec::single(p, ind, op, w),
                [p, q] => FeatureSpec::pair(p, q, ind, op, w),
                _ => return Err(err()),
            }
        };
        spec.validate(schema).map_err(|_| err())?;
        Ok(spec)
    }
}

/// Windows and paradigms to expand each (pair, indicator, operator) into.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionConfig {
    /// `None` stands for the unwindowed variant.
    pub windows: Vec<Option<i64>>,
    pub paradigms: Vec<Paradigm>,
}

impl ExpansionConfig {
    fn has(&self, p: Paradigm) -> bool {
        self.paradigms.contains(&p)
    }

    fn distance_applies(&self, indicator: Indicator, operator: Operator) -> bool {
        self.has(Paradigm::Distance)
            && indicator.is_per_row()
            && matches!(operator, Operator::Mean | Operator::Max | Operator::Min)
    }

    /// Candidates generated for one pair before single-field deduplication.
    pub fn per_pair_count(&self, indicator: Indicator, operator: Operator) -> usize {
        let per_window = 2 * self.has(Paradigm::Single) as usize
            + self.has(Paradigm::Pair) as usize
            + 2 * self.has(Paradigm::Ratio) as usize
            + self.distance_applies(indicator, operator) as usize;
        self.windows.len() * per_window
    }
}

/// Expand one field pair. Single-field specs already present in `seen` are
/// skipped and newly emitted specs are added to it.
pub fn enumerate_specs(
    pair: (usize, usize),
    indicator: Indicator,
    operator: Operator,
    cfg: &ExpansionConfig,
    seen: &mut HashSet<FeatureSpec>,
) -> Vec<FeatureSpec> {
    let (p, q) = (pair.0.min(pair.1), pair.0.max(pair.1));
    let mut out = Vec::new();
    for &w in &cfg.windows {
        for &paradigm in &cfg.paradigms {
            match paradigm {
                Paradigm::Single => {
                    for f in [p, q] {
                        let s = FeatureSpec::single(f, indicator, operator, w);
                        if seen.insert(s) {
                            out.push(s);
                        }
                    }
                }
                Paradigm::Pair => out.push(FeatureSpec::pair(p, q, indicator, operator, w)),
                Paradigm::Ratio => {
                    out.push(FeatureSpec::ratio(p, q, p, indicator, operator, w));
                    out.push(FeatureSpec::ratio(p, q, q, indicator, operator, w));
                }
                Paradigm::Distance => {
                    if cfg.distance_applies(indicator, operator) {
                        out.push(FeatureSpec::distance(p, Some(q), indicator, operator, w));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// `|F|^2/2 * |I| * |W| * |O| * |P|`.
    pub nominal: f64,
    /// Candidates actually produced when every pair of every compatible
    /// (indicator, operator) combination is expanded.
    pub enumerated: usize,
}

pub fn count_search_space(
    n_fields: usize,
    indicators: &[Indicator],
    operators: &[Operator],
    cfg: &ExpansionConfig,
) -> SearchSpace {
    let nominal = (n_fields * n_fields) as f64 / 2.0
        * (indicators.len() * cfg.windows.len() * operators.len() * cfg.paradigms.len()) as f64;
    let pairs = n_fields * n_fields.saturating_sub(1) / 2;
    let singles = if cfg.has(Paradigm::Single) { n_fields * cfg.windows.len() } else { 0 };
    let mut enumerated = 0;
    for &ind in indicators {
        for &op in operators {
            if !op.applies_to(ind) || pairs == 0 {
                continue;
            }
            let non_single = cfg.per_pair_count(ind, op) - 2 * cfg.has(Paradigm::Single) as usize * cfg.windows.len();
            enumerated += singles + pairs * non_single;
        }
    }
    SearchSpace { nominal, enumerated }
}

/// A materialized column plus how many ratios hit a zero denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub values: Vec<f64>,
    pub guarded_divisions: usize,
}

/// Evaluate a spec at every target row. Missing values are `NaN`.
pub fn materialize(
    reference: &Dataset,
    targets: Targets<'_>,
    spec: &FeatureSpec,
    open_lower: bool,
) -> Result<Column> {
    spec.validate(reference.schema())?;
    let agg = spec.agg(open_lower);
    let main = ga(reference, targets, spec.key(), &agg)?;
    Ok(match spec.paradigm {
        Paradigm::Single | Paradigm::Pair => Column { values: main, guarded_divisions: 0 },
        Paradigm::Ratio => {
            let base = spec.base.expect("validated");
            let den = ga(reference, targets, GroupKey::Single(base), &agg)?;
            let mut guarded = 0;
            let values = main
                .iter()
                .zip(&den)
                .map(|(&n, &d)| {
                    if n.is_nan() || d.is_nan() {
                        f64::NAN
                    } else if d.abs() < RATIO_EPSILON {
                        guarded += 1;
                        f64::NAN
                    } else {
                        n / d
                    }
                })
                .collect();
            Column { values, guarded_divisions: guarded }
        }
        Paradigm::Distance => {
            let own = match targets {
                Targets::Reference => reference.indicator_values(spec.indicator)?,
                Targets::External(t) => t.indicator_values(spec.indicator)?,
            };
            let values = main.iter().zip(&own).map(|(g, x)| g - x).collect();
            Column { values, guarded_divisions: 0 }
        }
    })
}

/// Mean over the finite values at `rows` (all rows when `None`), or 0.
pub fn imputation_mean(values: &[f64], rows: Option<&[usize]>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    let mut add = |v: f64| {
        if v.is_finite() {
            sum += v;
            n += 1;
        }
    };
    match rows {
        Some(rows) => rows.iter().for_each(|&r| add(values[r])),
        None => values.iter().copied().for_each(&mut add),
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Replace non-finite entries with `fill`.
pub fn impute(values: &mut [f64], fill: f64) {
    for v in values.iter_mut().filter(|v| !v.is_finite()) {
        *v = fill;
    }
}

/// Dense column-major feature values aligned with a dataset's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Per column, which rows were missing before imputation.
    pub missing: Vec<Vec<bool>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    pub fn empty(n_rows: usize) -> Self {
        FeatureMatrix { names: Vec::new(), columns: Vec::new(), missing: Vec::new(), n_rows }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn take_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            missing: self.missing.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            n_rows: rows.len(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(std::io::BufWriter::new(file));
        if self.n_cols() == 0 {
            drop(w);
            return std::fs::write(path, "\n".repeat(self.n_rows + 1)).map_err(|e| Error::file(path, e));
        }
        w.write_record(&self.names)?;
        let mut row = Vec::with_capacity(self.n_cols());
        for r in 0..self.n_rows {
            row.clear();
            row.extend(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, delimiter: u8) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut r = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(std::io::BufReader::new(file));
        let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut columns = vec![Vec::new(); names.len()];
        let mut n_rows = 0;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{cell}` is not a number"),
                })?;
                columns[c].push(v);
            }
            n_rows += 1;
        }
        let missing = columns.iter().map(|c: &Vec<f64>| c.iter().map(|v| !v.is_finite()).collect()).collect();
        Ok(FeatureMatrix { names, columns, missing, n_rows })
    }
}

/// Where a template feature came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: String,
    pub task_id: usize,
    pub iteration: usize,
    pub pair: (String, String),
    pub variance: f64,
    pub importance: f64,
    pub wrapper_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFeature {
    pub name: String,
    pub spec: FeatureSpec,
    pub imputation: f64,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

/// Ordered list of effective features, reusable on the full data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTemplate {
    pub version: String,
    pub fingerprint: String,
    #[serde(default)]
    pub window_open_lower: bool,
    pub features: Vec<TemplateFeature>,
}

impl FeatureTemplate {
    pub fn new(fingerprint: String, window_open_lower: bool) -> Self {
        FeatureTemplate { version: ENGINE_VERSION.to_owned(), fingerprint, window_open_lower, features: Vec::new() }
    }

    pub fn push(&mut self, schema: &Schema, spec: FeatureSpec, imputation: f64, provenance: Option<Provenance>) -> Result<()> {
        spec.validate(schema)?;
        let name = spec.canonical_name(schema);
        if self.features.iter().any(|f| f.name == name) {
            return Err(Error::Template(format!("duplicate feature `{name}`")));
        }
        if !imputation.is_finite() {
            return Err(Error::Template(format!("non-finite imputation value for `{name}`")));
        }
        self.features.push(TemplateFeature { name, spec, imputation, provenance });
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let t: FeatureTemplate = serde_json::from_str(&text).map_err(|e| Error::Template(format!("{}: {e}", path.display())))?;
        Ok(t)
    }

    /// Check the template against a schema: names parse back to their specs.
    pub fn check(&self, schema: &Schema) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.features {
            let parsed = FeatureSpec::parse(&f.name, schema)?;
            if parsed != f.spec {
                return Err(Error::Template(format!("feature `{}` does not match its recorded spec", f.name)));
            }
            if !names.insert(&f.name) {
                return Err(Error::Template(format!("duplicate feature `{}`", f.name)));
            }
            if !f.imputation.is_finite() {
                return Err(Error::Template(format!("non-finite imputation value for `{}`", f.name)));
            }
        }
        Ok(())
    }
}

/// Materialize every template feature on `full` (each row left out of its
/// own groups) and impute with the stored training means.
pub fn apply_template(full: &Dataset, template: &FeatureTemplate) -> Result<FeatureMatrix> {
    let fp = full.fingerprint();
    if fp != template.fingerprint {
        return Err(Error::Template(format!(
            "schema fingerprint mismatch: data {fp}, template {}",
            template.fingerprint
        )));
    }
    template.check(full.schema())?;
    let columns: Vec<Column> = template
        .features
        .par_iter()
        .map(|f| materialize(full, Targets::Reference, &f.spec, template.window_open_lower))
        .collect::<Result<_>>()?;
    let mut out = FeatureMatrix::empty(full.n_rows());
    for (f, col) in template.features.iter().zip(columns) {
        let missing: Vec<bool> = col.values.iter().map(|v| !v.is_finite()).collect();
        let mut values = col.values;
        impute(&mut values, f.imputation);
        out.names.push(f.name.clone());
        out.columns.push(values);
        out.missing.push(missing);
    }
    Ok(out)
}

impl fmt::Display for FeatureTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for feat in &self.features {
            writeln!(f, "{}", feat.name)?;
        }
        Ok(())
    }
}
