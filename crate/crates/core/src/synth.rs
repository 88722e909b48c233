//! Synthetic click logs with a planted field-pair interaction.
//!
//! Every categorical field is uniform. For the designated pair `(a, b)` a
//! random permutation `pi` of codes defines the matching combinations: in a
//! `planted_rate` fraction of rows `b = pi(a)`, otherwise `b` is drawn
//! uniformly from the other codes. Matching rows click with probability
//! `rate_planted`, all other rows with `rate_base`. Both marginals of `a` and
//! `b` stay uniform, so no single field carries signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Dictionary, Schema};
use crate::error::{Error, Result};

pub const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_rows: usize,
    pub n_fields: usize,
    pub cardinality: usize,
    pub days: i64,
    /// `None` yields labels independent of every field.
    pub pair: Option<(usize, usize)>,
    pub planted_rate: f64,
    pub rate_planted: f64,
    pub rate_base: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_rows: 20_000,
            n_fields: 8,
            cardinality: 10,
            days: 10,
            pair: Some((2, 5)),
            planted_rate: 0.05,
            rate_planted: 0.8,
            rate_base: 0.05,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn null(mut self) -> Self {
        self.pair = None;
        self
    }

    pub fn field_names(&self) -> Vec<String> {
        (0..self.n_fields).map(|f| format!("f{f}")).collect()
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.field_names(), "click").with_timestamp("ts")
    }
}

/// Rows are in timestamp order; timestamps are seconds in `[0, days * DAY)`.
pub fn planted(cfg: &PlantedConfig) -> Result<Dataset> {
    if cfg.cardinality < 2 || cfg.n_fields < 2 {
        return Err(Error::config("planted data needs at least 2 fields of cardinality 2"));
    }
    if let Some((a, b)) = cfg.pair {
        if a == b || a >= cfg.n_fields || b >= cfg.n_fields {
            return Err(Error::config(format!("invalid planted pair ({a}, {b})")));
        }
    }
    let n = cfg.n_rows;
    let card = cfg.cardinality as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut perm: Vec<u32> = (0..card).collect();
    perm.shuffle(&mut rng);

    let mut ts: Vec<i64> = (0..n).map(|_| rng.gen_range(0..cfg.days * DAY)).collect();
    ts.sort_unstable();
    let mut codes: Vec<Vec<u32>> = (0..cfg.n_fields).map(|_| Vec::with_capacity(n)).collect();
    let mut label = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<u32> = (0..cfg.n_fields).map(|_| rng.gen_range(0..card)).collect();
        let hit = match cfg.pair {
            Some((a, b)) => {
                let target = perm[row[a] as usize];
                if rng.gen_bool(cfg.planted_rate) {
                    row[b] = target;
                    true
                } else {
                    let v = rng.gen_range(0..card - 1);
                    row[b] = if v >= target { v + 1 } else { v };
                    false
                }
            }
            None => false,
        };
        let p = if hit { cfg.rate_planted } else { cfg.rate_base };
        label.push(rng.gen_bool(p) as u8);
        for (f, c) in row.into_iter().enumerate() {
            codes[f].push(c);
        }
    }
    let dicts = (0..cfg.n_fields).map(|_| Dictionary::from_values((0..card).map(|c| format!("c{c}")))).collect();
    Dataset::from_codes(cfg.schema(), codes, dicts, label, Some(ts), Vec::new())
}
