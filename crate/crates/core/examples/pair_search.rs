//! Latent-factor guided ordering of field pairs.

use crossfeat::search::{factorize, init_pair_matrix, off_diagonal_rmse, PairSearchState};
use crossfeat::synth::{planted, PlantedConfig};

pub fn run_example() -> crossfeat::Result<Vec<(usize, usize)>> {
    let d = planted(&PlantedConfig { n_rows: 10_000, n_fields: 6, pair: Some((2, 4)), ..Default::default() })?;
    let p = init_pair_matrix(&d)?;
    let v = factorize(&p, 4, 500, 0)?;
    println!("reconstruction rmse {:.4}", off_diagonal_rmse(&p, &v));

    let mut state = PairSearchState::new(p, v, 0.1, 3);
    let mut order = Vec::new();
    while let Some((i, j)) = state.next_pair() {
        println!("expand ({i}, {j}) predicted {:.4}", state.predicted(i, j));
        // pretend every expansion produced nothing useful
        state.update(i, j, 0.0);
        state.used.insert((i, j));
        order.push((i, j));
        if state.observe(0.5) {
            println!("early stop after {} pairs", order.len());
            break;
        }
    }
    Ok(order)
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
