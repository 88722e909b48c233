//! Columnar, dictionary-encoded log data.
//!
//! Categorical fields are stored as `u32` codes with one dictionary per
//! field. Numeric columns (label, timestamp, continuous indicators) are stored
//! densely. Datasets are immutable once built; `sample` and the split helpers
//! return new datasets that share the dictionaries of their parent.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved dictionary entry for empty categorical cells.
pub const MISSING: &str = "__MISSING__";

/// Name of the implicit all-ones indicator used by `count`.
pub const UNIT: &str = "unit";

const RESERVED_CHARS: &[char] = &['&', '|', ',', '(', ')'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub categorical: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
    /// Columns usable as aggregation indicators. Defaults to the label and unit.
    #[serde(default)]
    pub indicators: Vec<String>,
}

impl Schema {
    pub fn new(categorical: Vec<String>, label: impl Into<String>) -> Self {
        Schema {
            categorical,
            label: label.into(),
            timestamp: None,
            continuous: Vec::new(),
            indicators: Vec::new(),
        }
    }

    pub fn with_timestamp(mut self, ts: impl Into<String>) -> Self {
        self.timestamp = Some(ts.into());
        self
    }

    pub fn with_continuous(mut self, names: Vec<String>) -> Self {
        self.continuous = names;
        self
    }

    pub fn with_indicators(mut self, names: Vec<String>) -> Self {
        self.indicators = names;
        self
    }

    pub fn n_fields(&self) -> usize {
        self.categorical.len()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.categorical.iter().position(|f| f == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categorical.len() < 2 {
            return Err(Error::Schema(format!(
                "at least two categorical fields are required, got {}",
                self.categorical.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let all = self
            .categorical
            .iter()
            .chain(std::iter::once(&self.label))
            .chain(self.timestamp.iter())
            .chain(self.continuous.iter());
        for name in all {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if name == UNIT {
                return Err(Error::Schema(format!("`{UNIT}` is a reserved name")));
            }
            if name.contains(RESERVED_CHARS) {
                return Err(Error::Schema(format!(
                    "column name `{name}` contains one of {RESERVED_CHARS:?}"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for name in &self.indicators {
            self.indicator(name)?;
        }
        Ok(())
    }

    /// Resolve an indicator name against this schema.
    pub fn indicator(&self, name: &str) -> Result<Indicator> {
        if name == UNIT {
            return Ok(Indicator::Unit);
        }
        if name == self.label {
            return Ok(Indicator::Label);
        }
        if self.timestamp.as_deref() == Some(name) {
            return Ok(Indicator::Timestamp);
        }
        if let Some(i) = self.continuous.iter().position(|c| c == name) {
            return Ok(Indicator::Continuous(i));
        }
        Err(Error::Schema(format!(
            "`{name}` is not a usable indicator (label, timestamp, continuous column or `{UNIT}`)"
        )))
    }

    /// The declared indicator set, or `[label, unit]` when none is declared.
    pub fn indicator_set(&self) -> Result<Vec<Indicator>> {
        if self.indicators.is_empty() {
            return Ok(vec![Indicator::Label, Indicator::Unit]);
        }
        self.indicators.iter().map(|n| self.indicator(n)).collect()
    }

    pub fn indicator_name<'a>(&'a self, ind: &Indicator) -> &'a str {
        match ind {
            Indicator::Unit => UNIT,
            Indicator::Label => &self.label,
            Indicator::Timestamp => self.timestamp.as_deref().unwrap_or("timestamp"),
            Indicator::Continuous(i) => &self.continuous[*i],
        }
    }
}

/// A numeric column that can be aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Indicator {
    /// Constant 1 per row; only meaningful with `count`.
    Unit,
    /// The binary target.
    Label,
    Timestamp,
    Continuous(usize),
}

impl Indicator {
    /// Whether the indicator carries a distinct value per row that a
    /// distance feature may subtract. The label is excluded since subtracting
    /// it would expose the target.
    pub fn is_per_row(&self) -> bool {
        matches!(self, Indicator::Timestamp | Indicator::Continuous(_))
    }
}

/// Bidirectional mapping between raw strings and dense codes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut d = Dictionary::new();
        for v in values {
            d.encode(&v.into());
        }
        d
    }

    /// Code for `value`, inserting it if unseen.
    pub fn encode(&mut self, value: &str) -> u32 {
        if let Some(&c) = self.index.get(value) {
            return c;
        }
        let c = self.values.len() as u32;
        self.values.push(value.to_owned());
        self.index.insert(value.to_owned(), c);
        c
    }

    pub fn lookup(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn decode(&self, code: u32) -> Option<&str> {
        self.values.get(code as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            has_header: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<Schema>,
    codes: Vec<Vec<u32>>,
    dicts: Vec<Arc<Dictionary>>,
    label: Vec<u8>,
    timestamp: Option<Vec<i64>>,
    continuous: Vec<Vec<f64>>,
}

impl Dataset {
    /// Assemble a dataset from already-encoded columns.
    pub fn from_codes(
        schema: Schema,
        codes: Vec<Vec<u32>>,
        dicts: Vec<Dictionary>,
        label: Vec<u8>,
        timestamp: Option<Vec<i64>>,
        continuous: Vec<Vec<f64>>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = label.len();
        if codes.len() != schema.n_fields() || dicts.len() != schema.n_fields() {
            return Err(Error::Schema(format!(
                "expected {} categorical columns, got {}",
                schema.n_fields(),
                codes.len()
            )));
        }
        for (f, (col, dict)) in codes.iter().zip(&dicts).enumerate() {
            if col.len() != n {
                return Err(Error::Schema(format!(
                    "column `{}` has {} rows, label has {n}",
                    schema.categorical[f],
                    col.len()
                )));
            }
            if let Some(&bad) = col.iter().find(|&&c| c as usize >= dict.len()) {
                return Err(Error::Schema(format!(
                    "code {bad} out of range for `{}` (cardinality {})",
                    schema.categorical[f],
                    dict.len()
                )));
            }
        }
        if label.iter().any(|&y| y > 1) {
            return Err(Error::Schema("label values must be 0 or 1".into()));
        }
        match (&schema.timestamp, &timestamp) {
            (Some(_), Some(ts)) if ts.len() != n => {
                return Err(Error::Schema("timestamp length mismatch".into()))
            }
            (Some(name), None) => {
                return Err(Error::Schema(format!("timestamp column `{name}` missing")))
            }
            (None, Some(_)) => {
                return Err(Error::Schema("timestamp given but not declared".into()))
            }
            _ => {}
        }
        if continuous.len() != schema.continuous.len() {
            return Err(Error::Schema("continuous column count mismatch".into()));
        }
        for (name, col) in schema.continuous.iter().zip(&continuous) {
            if col.len() != n {
                return Err(Error::Schema(format!("column `{name}` length mismatch")));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("column `{name}` has non-finite values")));
            }
        }
        Ok(Dataset {
            schema: Arc::new(schema),
            codes,
            dicts: dicts.into_iter().map(Arc::new).collect(),
            label,
            timestamp,
            continuous,
        })
    }

    /// Encode raw string columns (one `Vec` per categorical field).
    pub fn from_strings<S: AsRef<str>>(
        schema: Schema,
        fields: &[Vec<S>],
        label: Vec<u8>,
        timestamp: Option<Vec<i64>>,
        continuous: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut dicts = Vec::with_capacity(fields.len());
        let mut codes = Vec::with_capacity(fields.len());
        for col in fields {
            let mut d = Dictionary::new();
            codes.push(col.iter().map(|v| encode_cell(&mut d, v.as_ref())).collect());
            dicts.push(d);
        }
        Dataset::from_codes(schema, codes, dicts, label, timestamp, continuous)
    }

    /// Load a delimited text file. Rows are kept in file order.
    pub fn load(path: impl AsRef<Path>, schema: &Schema, opts: LoadOptions) -> Result<Self> {
        let path = path.as_ref();
        schema.validate()?;
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(opts.delimiter)
            .has_headers(opts.has_header)
            .from_reader(std::io::BufReader::new(file));

        let header: Vec<String> = if opts.has_header {
            reader.headers()?.iter().map(|h| h.trim().to_owned()).collect()
        } else {
            return Err(Error::config("files without a header row cannot be mapped to a schema"));
        };
        let column = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("missing column `{name}` in {}", path.display())))
        };
        let cat_idx: Vec<usize> = schema.categorical.iter().map(|n| column(n)).collect::<Result<_>>()?;
        let label_idx = column(&schema.label)?;
        let ts_idx = schema.timestamp.as_deref().map(column).transpose()?;
        let cont_idx: Vec<usize> = schema.continuous.iter().map(|n| column(n)).collect::<Result<_>>()?;

        let mut dicts = vec![Dictionary::new(); cat_idx.len()];
        let mut codes = vec![Vec::new(); cat_idx.len()];
        let mut label = Vec::new();
        let mut ts = ts_idx.map(|_| Vec::new());
        let mut cont = vec![Vec::new(); cont_idx.len()];

        let mut record = csv::StringRecord::new();
        while reader.read_record(&mut record)? {
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let cell = |i: usize| record.get(i).unwrap_or("").trim();
            for (f, &i) in cat_idx.iter().enumerate() {
                codes[f].push(encode_cell(&mut dicts[f], cell(i)));
            }
            label.push(match cell(label_idx) {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("label `{}` is not 0 or 1", other),
                    })
                }
            });
            if let (Some(i), Some(ts)) = (ts_idx, ts.as_mut()) {
                let raw = cell(i);
                ts.push(raw.parse::<i64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("timestamp `{raw}` is not an integer"),
                })?);
            }
            for (c, &i) in cont_idx.iter().enumerate() {
                let raw = cell(i);
                let v = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Parse {
                        line,
                        message: format!("`{}` value `{raw}` is not a finite number", schema.continuous[c]),
                    }
                })?;
                cont[c].push(v);
            }
        }
        Dataset::from_codes(schema.clone(), codes, dicts, label, ts, cont)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.label.len()
    }

    pub fn n_fields(&self) -> usize {
        self.codes.len()
    }

    pub fn codes(&self, field: usize) -> &[u32] {
        &self.codes[field]
    }

    pub fn dictionary(&self, field: usize) -> &Dictionary {
        &self.dicts[field]
    }

    pub fn cardinality(&self, field: usize) -> usize {
        self.dicts[field].len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.label
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamp.as_deref()
    }

    pub fn continuous(&self, i: usize) -> &[f64] {
        &self.continuous[i]
    }

    pub fn positive_rate(&self) -> f64 {
        if self.label.is_empty() {
            return 0.0;
        }
        self.label.iter().map(|&y| y as f64).sum::<f64>() / self.label.len() as f64
    }

    /// Values of an indicator for every row.
    pub fn indicator_values(&self, ind: Indicator) -> Result<Vec<f64>> {
        Ok(match ind {
            Indicator::Unit => vec![1.0; self.n_rows()],
            Indicator::Label => self.label.iter().map(|&y| y as f64).collect(),
            Indicator::Timestamp => self
                .timestamp
                .as_ref()
                .ok_or_else(|| Error::config("timestamp indicator requested but no timestamp column"))?
                .iter()
                .map(|&t| t as f64)
                .collect(),
            Indicator::Continuous(i) => self
                .continuous
                .get(i)
                .ok_or_else(|| Error::config(format!("continuous indicator {i} out of range")))?
                .clone(),
        })
    }

    /// Rows `rows` (in the given order) as a new dataset with shared dictionaries.
    pub fn take(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            codes: self.codes.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            dicts: self.dicts.clone(),
            label: rows.iter().map(|&r| self.label[r]).collect(),
            timestamp: self
                .timestamp
                .as_ref()
                .map(|ts| rows.iter().map(|&r| ts[r]).collect()),
            continuous: self
                .continuous
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// Uniform sampling without replacement; keeps `round(rate * n)` rows in
    /// their original order.
    pub fn sample(&self, rate: f64, seed: u64) -> Result<Dataset> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::config(format!("sampling rate must be in (0, 1], got {rate}")));
        }
        let n = self.n_rows();
        let k = ((rate * n as f64).round() as usize).min(n);
        if k == n {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = index::sample(&mut rng, n, k).into_vec();
        rows.sort_unstable();
        Ok(self.take(&rows))
    }

    /// Holdout split. Random when `by_time` is false; otherwise the rows with
    /// the largest timestamps form the validation part, keeping every group of
    /// equal timestamps on one side.
    pub fn split_holdout(&self, rate_valid: f64, seed: u64, by_time: bool) -> Result<(Dataset, Dataset)> {
        let (train, valid) = if by_time {
            let ts = self
                .timestamps()
                .ok_or_else(|| Error::config("time-based split requires a timestamp column"))?;
            time_split_indices(ts, rate_valid)?
        } else {
            split_indices(self.n_rows(), rate_valid, seed)?
        };
        Ok((self.take(&train), self.take(&valid)))
    }

    /// Rows with timestamp `< cutoff` go to the first part, the rest to the second.
    pub fn split_at(&self, cutoff: i64) -> Result<(Dataset, Dataset)> {
        let ts = self
            .timestamps()
            .ok_or_else(|| Error::config("time-based split requires a timestamp column"))?;
        let (before, after): (Vec<usize>, Vec<usize>) = (0..ts.len()).partition(|&r| ts[r] < cutoff);
        if before.is_empty() || after.is_empty() {
            return Err(Error::config(format!("cutoff {cutoff} leaves an empty partition")));
        }
        Ok((self.take(&before), self.take(&after)))
    }

    /// Hash of the schema's names plus the dictionary cardinalities.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let s = &self.schema;
        for (f, name) in s.categorical.iter().enumerate() {
            h.update(format!("cat:{name}:{}\n", self.cardinality(f)).as_bytes());
        }
        h.update(format!("label:{}\n", s.label).as_bytes());
        if let Some(ts) = &s.timestamp {
            h.update(format!("ts:{ts}\n").as_bytes());
        }
        for c in &s.continuous {
            h.update(format!("cont:{c}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn profile(&self) -> Profile {
        Profile {
            n_rows: self.n_rows(),
            positive_rate: self.positive_rate(),
            fields: self
                .schema
                .categorical
                .iter()
                .enumerate()
                .map(|(f, name)| FieldProfile {
                    name: name.clone(),
                    cardinality: self.cardinality(f),
                })
                .collect(),
            timestamp_range: self
                .timestamps()
                .and_then(|ts| Some((*ts.iter().min()?, *ts.iter().max()?))),
            fingerprint: self.fingerprint(),
        }
    }
}

fn encode_cell(dict: &mut Dictionary, raw: &str) -> u32 {
    if raw.is_empty() {
        dict.encode(MISSING)
    } else {
        dict.encode(raw)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldProfile {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Profile {
    pub n_rows: usize,
    pub positive_rate: f64,
    pub fields: Vec<FieldProfile>,
    pub timestamp_range: Option<(i64, i64)>,
    pub fingerprint: String,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows={} positive_rate={:.5}", self.n_rows, self.positive_rate)?;
        for field in &self.fields {
            writeln!(f, "  {} cardinality={}", field.name, field.cardinality)?;
        }
        Ok(())
    }
}

/// Random disjoint split of `0..n` into (train, valid), both sorted.
pub fn split_indices(n: usize, rate_valid: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(rate_valid > 0.0 && rate_valid < 1.0) {
        return Err(Error::config(format!("validation rate must be in (0, 1), got {rate_valid}")));
    }
    let n_valid = (rate_valid * n as f64).round() as usize;
    if n_valid == 0 || n_valid >= n {
        return Err(Error::config(format!(
            "split of {n} rows at rate {rate_valid} leaves an empty partition"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_valid = vec![false; n];
    for r in index::sample(&mut rng, n, n_valid) {
        is_valid[r] = true;
    }
    Ok((0..n).partition(|&r| !is_valid[r]))
}

fn time_split_indices(ts: &[i64], rate_valid: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(rate_valid > 0.0 && rate_valid < 1.0) {
        return Err(Error::config(format!("validation rate must be in (0, 1), got {rate_valid}")));
    }
    let n = ts.len();
    let n_valid = (rate_valid * n as f64).round() as usize;
    if n_valid == 0 || n_valid >= n {
        return Err(Error::config("time split leaves an empty partition"));
    }
    let mut sorted = ts.to_vec();
    sorted.sort_unstable();
    let threshold = sorted[n - n_valid];
    let (train, valid): (Vec<usize>, Vec<usize>) = (0..n).partition(|&r| ts[r] < threshold);
    if train.is_empty() {
        return Err(Error::config("time split leaves an empty training partition"));
    }
    Ok((train, valid))
}
