//! Search a sampled log, reuse the template on the full log and compare the
//! constructed features with raw one-hot encoding.

use crossfeat::aggregate::Operator;
use crossfeat::construct::apply_template;
use crossfeat::learners::LearnerKind;
use crossfeat::pipeline::{one_hot_features, run_on, train_and_evaluate, RunConfig};
use crossfeat::synth::{planted, PlantedConfig, DAY};

pub fn run_example() -> crossfeat::Result<(f64, f64)> {
    let p = PlantedConfig { n_rows: 8000, n_fields: 5, pair: Some((1, 3)), seed: 4, ..Default::default() };
    let d = planted(&p)?;

    let mut cfg = RunConfig::new(p.schema());
    cfg.features.windows = vec![3];
    cfg.features.window_unit = DAY;
    cfg.features.operators = vec![Operator::Sum, Operator::Mean, Operator::Count];
    cfg.sampling.rate = 0.5;
    cfg.search.patience = 3;
    cfg.train.learner = LearnerKind::Lr;
    cfg.train.test_cutoff = Some(9 * DAY);

    let out = run_on(&d, &cfg)?;
    println!("{}", out.template);
    let dir = std::env::temp_dir().join("crossfeat-end-to-end");
    out.save(&dir)?;

    let features = apply_template(&d, &out.template)?;
    let (_, constructed) = train_and_evaluate(&features, &d, &cfg.train)?;
    let (_, raw) = train_and_evaluate(&one_hot_features(&d), &d, &cfg.train)?;
    println!("last-day test AUC: constructed {:.4}, one-hot {:.4}", constructed.auc_test, raw.auc_test);
    Ok((constructed.auc_test, raw.auc_test))
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
