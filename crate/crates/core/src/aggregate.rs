//! Groupby-then-aggregate kernel.
//!
//! For every target row the kernel gathers the reference rows sharing the
//! row's key codes (optionally restricted to a trailing time window, and never
//! including the row itself) and reduces one indicator over them.
//!
//! Reference rows are sorted once by `(key, timestamp, value)`; every group
//! then occupies a contiguous run and every window is a contiguous sub-run.
//! A segment tree of mergeable moments answers each range in `O(log n)`, so a
//! full column costs `O(n log n)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Indicator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Sum,
    Mean,
    Std,
    Max,
    Min,
    Count,
}

impl Operator {
    pub const ALL: [Operator; 6] = [
        Operator::Sum,
        Operator::Mean,
        Operator::Std,
        Operator::Max,
        Operator::Min,
        Operator::Count,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Operator::Sum => "sum",
            Operator::Mean => "mean",
            Operator::Std => "std",
            Operator::Max => "max",
            Operator::Min => "min",
            Operator::Count => "count",
        }
    }

    /// Compatibility table between operators and indicator kinds.
    ///
    /// `count` pairs only with the unit indicator and vice versa; timestamps
    /// take no `sum`/`std`; the binary label takes no `max`/`min`.
    pub fn applies_to(&self, ind: Indicator) -> bool {
        use Operator::*;
        match (ind, self) {
            (Indicator::Unit, Count) => true,
            (Indicator::Unit, _) | (_, Count) => false,
            (Indicator::Timestamp, Sum | Std) => false,
            (Indicator::Label, Max | Min) => false,
            _ => true,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Operator::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown operator `{s}`")))
    }
}

/// One or two categorical fields defining the groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Single(usize),
    Pair(usize, usize),
}

impl GroupKey {
    pub fn pair(p: usize, q: usize) -> Result<Self> {
        if p == q {
            return Err(Error::invalid(format!("group key fields must differ, got {p} twice")));
        }
        Ok(GroupKey::Pair(p.min(q), p.max(q)))
    }

    pub fn fields(&self) -> Vec<usize> {
        match *self {
            GroupKey::Single(p) => vec![p],
            GroupKey::Pair(p, q) => vec![p, q],
        }
    }
}

/// Trailing time window `[t - span, t)` in timestamp units; with
/// `open_lower` the lower bound is excluded as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub span: i64,
    #[serde(default)]
    pub open_lower: bool,
}

impl Window {
    pub fn new(span: i64) -> Self {
        Window { span, open_lower: false }
    }

    pub fn contains(&self, t_row: i64, t_target: i64) -> bool {
        let lower = t_target - self.span;
        let above = if self.open_lower { t_row > lower } else { t_row >= lower };
        above && t_row < t_target
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggSpec {
    pub operator: Operator,
    pub indicator: Indicator,
    pub window: Option<Window>,
}

/// Which rows are being scored.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// The reference rows themselves; each row is left out of its own group.
    Reference,
    /// Rows of another dataset; whole groups are aggregated.
    External(&'a Dataset),
}

/// Reduce a non-empty list. `std` is the population standard deviation.
pub fn aggregate_scalar(values: &[f64], op: Operator) -> f64 {
    let n = values.len() as f64;
    match op {
        Operator::Count => n,
        Operator::Sum => values.iter().sum(),
        Operator::Mean => values.iter().sum::<f64>() / n,
        Operator::Std => {
            let mean = values.iter().sum::<f64>() / n;
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        }
        Operator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Operator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Value reported for an empty group.
pub fn empty_value(op: Operator) -> f64 {
    if op == Operator::Count {
        0.0
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    mean: f64,
    m2: f64,
    max: f64,
    min: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        n: 0.0,
        sum: 0.0,
        mean: 0.0,
        m2: 0.0,
        max: f64::NEG_INFINITY,
        min: f64::INFINITY,
    };

    fn one(v: f64) -> Self {
        Moments { n: 1.0, sum: v, mean: v, m2: 0.0, max: v, min: v }
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        Moments {
            n,
            sum: self.sum + o.sum,
            mean: self.mean + delta * o.n / n,
            m2: self.m2 + o.m2 + delta * delta * self.n * o.n / n,
            max: self.max.max(o.max),
            min: self.min.min(o.min),
        }
    }

    fn finish(&self, op: Operator) -> f64 {
        if self.n == 0.0 {
            return empty_value(op);
        }
        match op {
            Operator::Count => self.n,
            Operator::Sum => self.sum,
            Operator::Mean => self.mean,
            Operator::Std => (self.m2.max(0.0) / self.n).sqrt(),
            Operator::Max => self.max,
            Operator::Min => self.min,
        }
    }
}

struct SegmentTree {
    size: usize,
    nodes: Vec<Moments>,
}

impl SegmentTree {
    fn new(values: &[f64]) -> Self {
        let size = values.len().next_power_of_two().max(1);
        let mut nodes = vec![Moments::EMPTY; 2 * size];
        for (i, &v) in values.iter().enumerate() {
            nodes[size + i] = Moments::one(v);
        }
        for i in (1..size).rev() {
            nodes[i] = nodes[2 * i].merge(nodes[2 * i + 1]);
        }
        SegmentTree { size, nodes }
    }

    fn query(&self, lo: usize, hi: usize) -> Moments {
        let (mut left, mut right) = (Moments::EMPTY, Moments::EMPTY);
        let (mut l, mut r) = (lo + self.size, hi + self.size);
        while l < r {
            if l & 1 == 1 {
                left = left.merge(self.nodes[l]);
                l += 1;
            }
            if r & 1 == 1 {
                r -= 1;
                right = self.nodes[r].merge(right);
            }
            l >>= 1;
            r >>= 1;
        }
        left.merge(right)
    }
}

/// Composite key of one row, or `None` when a code is absent from the
/// reference dictionaries.
fn row_key(codes: &[Option<u32>], cards: &[u64]) -> Option<u64> {
    let mut key = 0u64;
    for (c, &card) in codes.iter().zip(cards) {
        key = key * card + (*c)? as u64;
    }
    Some(key)
}

/// Per-field mapping from target codes to reference codes.
fn code_maps(reference: &Dataset, targets: &Dataset, fields: &[usize]) -> Vec<Option<Vec<Option<u32>>>> {
    fields
        .iter()
        .map(|&f| {
            let (rd, td) = (reference.dictionary(f), targets.dictionary(f));
            if std::ptr::eq(rd, td) || rd == td {
                None
            } else {
                Some(td.values().iter().map(|v| rd.lookup(v)).collect())
            }
        })
        .collect()
}

fn check_key(d: &Dataset, key: &GroupKey) -> Result<()> {
    for f in key.fields() {
        if f >= d.n_fields() {
            return Err(Error::config(format!("field index {f} out of range")));
        }
    }
    if let GroupKey::Pair(p, q) = key {
        if p == q {
            return Err(Error::invalid("group key fields must differ"));
        }
    }
    Ok(())
}

/// Groupby-then-aggregate over `reference`, evaluated at each target row.
///
/// Empty groups yield `NaN` (or `0` for `count`).
pub fn ga(reference: &Dataset, targets: Targets<'_>, key: GroupKey, spec: &AggSpec) -> Result<Vec<f64>> {
    if !spec.operator.applies_to(spec.indicator) {
        return Err(Error::config(format!(
            "operator `{}` does not apply to indicator `{}`",
            spec.operator,
            reference.schema().indicator_name(&spec.indicator)
        )));
    }
    check_key(reference, &key)?;
    let target_data = match targets {
        Targets::Reference => reference,
        Targets::External(t) => {
            check_key(t, &key)?;
            if t.schema().categorical != reference.schema().categorical {
                return Err(Error::Schema("target and reference fields differ".into()));
            }
            t
        }
    };
    if let Some(w) = spec.window {
        if w.span <= 0 {
            return Err(Error::config(format!("window span must be positive, got {}", w.span)));
        }
        if reference.timestamps().is_none() || target_data.timestamps().is_none() {
            return Err(Error::config("a time window requires a timestamp column"));
        }
    }

    let fields = key.fields();
    let cards: Vec<u64> = fields.iter().map(|&f| reference.cardinality(f) as u64).collect();
    let values = reference.indicator_values(spec.indicator)?;
    let ref_ts = reference.timestamps();
    let n_ref = reference.n_rows();

    let ref_keys: Vec<u64> = (0..n_ref)
        .map(|r| {
            let codes: Vec<Option<u32>> = fields.iter().map(|&f| Some(reference.codes(f)[r])).collect();
            row_key(&codes, &cards).expect("reference codes are in range")
        })
        .collect();
    let ts_of = |r: usize| ref_ts.map_or(0, |t| t[r]);

    let mut order: Vec<usize> = (0..n_ref).collect();
    order.sort_unstable_by(|&a, &b| {
        ref_keys[a]
            .cmp(&ref_keys[b])
            .then(ts_of(a).cmp(&ts_of(b)))
            .then(a.cmp(&b))
    });
    let sorted_values: Vec<f64> = order.iter().map(|&r| values[r]).collect();
    let sorted_ts: Vec<i64> = order.iter().map(|&r| ts_of(r)).collect();
    let mut position = vec![0usize; n_ref];
    for (pos, &r) in order.iter().enumerate() {
        position[r] = pos;
    }
    let mut ranges: HashMap<u64, (usize, usize)> = HashMap::new();
    for (pos, &r) in order.iter().enumerate() {
        ranges.entry(ref_keys[r]).and_modify(|g| g.1 = pos + 1).or_insert((pos, pos + 1));
    }
    // one tree per group so that results never depend on rows of other groups
    let groups: HashMap<u64, (usize, usize, SegmentTree)> = ranges
        .into_iter()
        .map(|(key, (start, end))| (key, (start, end, SegmentTree::new(&sorted_values[start..end]))))
        .collect();

    let maps = match targets {
        Targets::Reference => vec![None; fields.len()],
        Targets::External(t) => code_maps(reference, t, &fields),
    };
    let target_ts = target_data.timestamps();
    let self_rows = matches!(targets, Targets::Reference);
    let op = spec.operator;

    let out = (0..target_data.n_rows())
        .into_par_iter()
        .map(|k| {
            let codes: Vec<Option<u32>> = fields
                .iter()
                .zip(&maps)
                .map(|(&f, map)| {
                    let c = target_data.codes(f)[k];
                    match map {
                        None => Some(c),
                        Some(m) => m[c as usize],
                    }
                })
                .collect();
            let Some((start, end, tree)) = row_key(&codes, &cards).and_then(|key| groups.get(&key)) else {
                return empty_value(op);
            };
            let stats = match spec.window {
                Some(w) => {
                    let t = target_ts.expect("checked above")[k];
                    let run = &sorted_ts[*start..*end];
                    let lower = t - w.span;
                    let lo = if w.open_lower {
                        run.partition_point(|&x| x <= lower)
                    } else {
                        run.partition_point(|&x| x < lower)
                    };
                    let hi = run.partition_point(|&x| x < t);
                    if lo >= hi {
                        Moments::EMPTY
                    } else {
                        tree.query(lo, hi)
                    }
                }
                None if self_rows => {
                    let pos = position[k] - start;
                    tree.query(0, pos).merge(tree.query(pos + 1, end - start))
                }
                None => tree.query(0, end - start),
            };
            stats.finish(op)
        })
        .collect();
    Ok(out)
}



#[cfg(test)]
mod tests {
    use super::oracle::ga_naive;
    use super::toy::toy;
    use super::*;
    use crate::dataset::Schema;
    use proptest::prelude::*;

    fn spec(op: Operator, ind: Indicator, w: Option<i64>) -> AggSpec {
        AggSpec { operator: op, indicator: ind, window: w.map(Window::new) }
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(aggregate_scalar(&[1.0, 0.0], Operator::Mean), 0.5);
        assert_eq!(aggregate_scalar(&[2.0, 2.0, 2.0], Operator::Std), 0.0);
        let s = aggregate_scalar(&[1.0, 2.0, 3.0, 4.0], Operator::Std);
        assert!((s - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate_scalar(&[3.0, -1.0], Operator::Min), -1.0);
        assert_eq!(aggregate_scalar(&[3.0, -1.0], Operator::Count), 2.0);
    }

    #[test]
    fn toy_leave_one_out_sum() {
        let t = toy();
        let out = ga(&t, Targets::Reference, GroupKey::Single(0), &spec(Operator::Sum, Indicator::Label, None)).unwrap();
        // r3: r1 + r2 = 1 + 0; r4 is alone in group b
        assert_eq!(out[2], 1.0);
        assert!(out[3].is_nan());
    }

    #[test]
    fn toy_windowed_mean() {
        let t = toy();
        let out = ga(&t, Targets::Reference, GroupKey::Single(0), &spec(Operator::Mean, Indicator::Label, Some(2))).unwrap();
        assert_eq!(out[2], 0.5);
        assert!(out[0].is_nan());
    }

    #[test]
    fn toy_pair_count_of_empty_group_is_zero() {
        let t = toy();
        let out = ga(&t, Targets::Reference, GroupKey::pair(0, 1).unwrap(), &spec(Operator::Count, Indicator::Unit, None)).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn open_lower_bound_excludes_boundary() {
        let t = toy();
        let mut s = spec(Operator::Count, Indicator::Unit, Some(2));
        let closed = ga(&t, Targets::Reference, GroupKey::Single(0), &s).unwrap();
        s.window = Some(Window { span: 2, open_lower: true });
        let open = ga(&t, Targets::Reference, GroupKey::Single(0), &s).unwrap();
        assert_eq!(closed[2], 2.0);
        assert_eq!(open[2], 1.0);
    }

    #[test]
    fn singleton_mean_is_missing() {
        let schema = Schema::new(vec!["A".into(), "B".into()], "y");
        let d = Dataset::from_strings(schema, &[vec!["a"], vec!["b"]], vec![1], None, vec![]).unwrap();
        let out = ga(&d, Targets::Reference, GroupKey::Single(0), &spec(Operator::Mean, Indicator::Label, None)).unwrap();
        assert!(out[0].is_nan());
    }

    #[test]
    fn single_element_std_is_zero() {
        let t = toy();
        let out = ga(&t, Targets::Reference, GroupKey::pair(0, 1).unwrap(), &spec(Operator::Std, Indicator::Label, None)).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn incompatible_specs_are_rejected() {
        let t = toy();
        let key = GroupKey::Single(0);
        assert!(matches!(ga(&t, Targets::Reference, key, &spec(Operator::Sum, Indicator::Timestamp, None)), Err(Error::Config(_))));
        assert!(matches!(ga(&t, Targets::Reference, key, &spec(Operator::Max, Indicator::Label, None)), Err(Error::Config(_))));
        assert!(matches!(ga(&t, Targets::Reference, key, &spec(Operator::Count, Indicator::Label, None)), Err(Error::Config(_))));
        let schema = Schema::new(vec!["A".into(), "B".into()], "y");
        let d = Dataset::from_strings(schema, &[vec!["a"], vec!["b"]], vec![1], None, vec![]).unwrap();
        let windowed = spec(Operator::Mean, Indicator::Label, Some(3));
        assert!(matches!(ga(&d, Targets::Reference, key, &windowed), Err(Error::Config(_))));
    }

    #[test]
    fn external_targets_use_whole_groups_and_translate_codes() {
        let t = toy();
        let schema = t.schema().clone();
        let other = Dataset::from_strings(schema, &[vec!["b", "a", "z"], vec!["x", "x", "x"]], vec![0, 0, 0], Some(vec![10, 10, 10]), vec![]).unwrap();
        let s = spec(Operator::Sum, Indicator::Label, None);
        let out = ga(&t, Targets::External(&other), GroupKey::Single(0), &s).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 2.0);
        assert!(out[2].is_nan());
        let naive = ga_naive(&t, Targets::External(&other), GroupKey::Single(0), &s);
        assert!(out.iter().zip(&naive).all(|(a, b)| a == b || (a.is_nan() && b.is_nan())));
    }

    fn random_dataset(n: usize, m: usize, card: u32, seed: u64) -> Dataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..m).map(|i| format!("F{i}")).collect();
        let schema = Schema::new(names, "y").with_timestamp("ts").with_continuous(vec!["price".into()]);
        let fields: Vec<Vec<String>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(0..card).to_string()).collect())
            .collect();
        let label = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
        let ts = (0..n).map(|_| rng.gen_range(0..20)).collect();
        let price = (0..n).map(|_| rng.gen_range(-5.0..50.0)).collect();
        Dataset::from_strings(schema, &fields, label, Some(ts), vec![price]).unwrap()
    }

    #[test]
    fn other_groups_do_not_change_results_bitwise() {
        let d = random_dataset(400, 2, 7, 11);
        let spec = AggSpec { operator: Operator::Mean, indicator: Indicator::Continuous(0), window: None };
        let before = ga(&d, Targets::Reference, GroupKey::Single(0), &spec).unwrap();
        let mut codes = vec![d.codes(0).to_vec(), d.codes(1).to_vec()];
        let old = codes[0][0];
        let new = (old + 1) % d.cardinality(0) as u32;
        codes[0][0] = new;
        let dicts = vec![d.dictionary(0).clone(), d.dictionary(1).clone()];
        let moved = Dataset::from_codes(
            d.schema().clone(),
            codes,
            dicts,
            d.labels().to_vec(),
            d.timestamps().map(|t| t.to_vec()),
            vec![d.continuous(0).to_vec()],
        )
        .unwrap();
        let after = ga(&moved, Targets::Reference, GroupKey::Single(0), &spec).unwrap();
        for r in (1..d.n_rows()).filter(|&r| d.codes(0)[r] != old && d.codes(0)[r] != new) {
            assert_eq!(before[r].to_bits(), after[r].to_bits());
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matches_naive_scan(seed in 0u64..10_000, n in 1usize..120, card in 1u32..6, w in 0i64..6) {
            let d = random_dataset(n, 3, card, seed);
            let window = if w == 0 { None } else { Some(w) };
            for ind in [Indicator::Label, Indicator::Unit, Indicator::Timestamp, Indicator::Continuous(0)] {
                for op in Operator::ALL {
                    if !op.applies_to(ind) { continue; }
                    for key in [GroupKey::Single(1), GroupKey::Pair(0, 2)] {
                        let s = spec(op, ind, window);
                        let fast = ga(&d, Targets::Reference, key, &s).unwrap();
                        let slow = ga_naive(&d, Targets::Reference, key, &s);
                        for (a, b) in fast.iter().zip(&slow) {
                            prop_assert!(close(*a, *b), "{:?} {:?}: {} vs {}", op, ind, a, b);
                        }
                    }
                }
            }
        }

        #[test]
        fn group_algebra(seed in 0u64..10_000) {
            let d = random_dataset(80, 2, 3, seed);
            let key = GroupKey::Pair(0, 1);
            let run = |op| ga(&d, Targets::Reference, key, &spec(op, Indicator::Continuous(0), None)).unwrap();
            let sum = run(Operator::Sum);
            let mean = run(Operator::Mean);
            let std = run(Operator::Std);
            let max = run(Operator::Max);
            let min = run(Operator::Min);
            let count = ga(&d, Targets::Reference, key, &spec(Operator::Count, Indicator::Unit, None)).unwrap();
            for r in 0..d.n_rows() {
                if count[r] == 0.0 { prop_assert!(mean[r].is_nan()); continue; }
                prop_assert!((sum[r] - mean[r] * count[r]).abs() < 1e-9 * sum[r].abs().max(1.0));
                prop_assert!(min[r] <= mean[r] + 1e-12 && mean[r] <= max[r] + 1e-12);
                prop_assert!(std[r] >= 0.0);
            }
        }
    }
}
