//! Expand a field pair into candidate features and materialize them.

use std::collections::HashSet;

use crossfeat::aggregate::{Operator, Targets};
use crossfeat::construct::{count_search_space, enumerate_specs, materialize, ExpansionConfig, FeatureSpec, Paradigm};
use crossfeat::dataset::Indicator;
use crossfeat::synth::{planted, PlantedConfig, DAY};

pub fn run_example() -> crossfeat::Result<usize> {
    let cfg = PlantedConfig { n_rows: 2000, n_fields: 4, pair: Some((0, 1)), ..Default::default() };
    let d = planted(&cfg)?;
    let expansion = ExpansionConfig { windows: vec![Some(3 * DAY), None], paradigms: Paradigm::ALL.to_vec() };

    let mut seen = HashSet::new();
    let specs = enumerate_specs((0, 1), Indicator::Label, Operator::Mean, &expansion, &mut seen);
    for spec in &specs {
        let name = spec.canonical_name(d.schema());
        assert_eq!(FeatureSpec::parse(&name, d.schema())?, *spec);
        let col = materialize(&d, Targets::Reference, spec, false)?;
        let missing = col.values.iter().filter(|v| v.is_nan()).count();
        println!("{name:<60} missing {missing:>5} guarded {}", col.guarded_divisions);
    }

    let q = count_search_space(d.n_fields(), &[Indicator::Label, Indicator::Unit], &[Operator::Mean, Operator::Count], &expansion);
    println!("nominal space {} / enumerated {}", q.nominal, q.enumerated);
    Ok(specs.len())
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
