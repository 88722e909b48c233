//! Filter, Embedded and Wrapper selection over a mixed candidate set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossfeat::construct::FeatureMatrix;
use crossfeat::selection::{fsa, selection_learner, SelectionThresholds};

pub fn run_example() -> crossfeat::Result<Vec<String>> {
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let signal: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<u8> = signal.iter().map(|&s| rng.gen_bool(0.1 + 0.8 * s) as u8).collect();

    let mut x = FeatureMatrix::empty(n);
    let mut add = |name: &str, col: Vec<f64>| {
        x.names.push(name.into());
        x.missing.push(vec![false; n]);
        x.columns.push(col);
    };
    add("signal", signal.clone());
    add("signal_copy", signal);
    add("constant", vec![1.0; n]);
    for k in 0..3 {
        add(&format!("noise{k}"), (0..n).map(|_| rng.gen::<f64>()).collect());
    }

    let (selected, report) = fsa(&x, &labels, &SelectionThresholds::default(), &selection_learner(), 0)?;
    for e in &report.filter {
        println!("filter   {:<12} variance {:.5} kept {}", e.name, e.value, e.kept);
    }
    for s in &report.wrapper {
        println!("wrapper  {:<12} score {:.4} delta {:+.4} accepted {}", s.name, s.score, s.delta, s.accepted);
    }
    let names: Vec<String> = selected.into_iter().map(|s| s.name).collect();
    println!("selected {names:?}");
    Ok(names)
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
