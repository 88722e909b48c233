//! Logistic regression, boosted trees and a factorization machine on the same
//! planted log.

use crossfeat::dataset::split_indices;
use crossfeat::learners::{as_slices, auc, one_hot, rela_impr, train_fm, train_gbdt, train_lr, FmConfig, GbdtConfig, LrConfig};
use crossfeat::synth::{planted, PlantedConfig};

fn rows<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn run_example() -> crossfeat::Result<(f64, f64)> {
    let d = planted(&PlantedConfig { n_rows: 6000, n_fields: 5, pair: Some((1, 3)), ..Default::default() })?;
    let (train, test) = split_indices(d.n_rows(), 0.3, 1)?;
    let x = one_hot(&d);
    let xtr: Vec<Vec<f64>> = x.iter().map(|c| rows(c, &train)).collect();
    let xte: Vec<Vec<f64>> = x.iter().map(|c| rows(c, &test)).collect();
    let (ytr, yte) = (rows(d.labels(), &train), rows(d.labels(), &test));

    let lr = train_lr(&as_slices(&xtr), &ytr, &LrConfig::default())?;
    let auc_lr = auc(&yte, &lr.predict_proba(&as_slices(&xte)))?;

    let gbdt = train_gbdt(&as_slices(&xtr), &ytr, &GbdtConfig::default())?;
    let auc_gbdt = auc(&yte, &gbdt.predict_proba(&as_slices(&xte)))?;

    let fm = train_fm(&d.take(&train), &FmConfig::default())?;
    let auc_fm = auc(&yte, &fm.predict_proba(&d.take(&test))?)?;

    println!("one-hot LR   {auc_lr:.4}");
    println!("one-hot GBDT {auc_gbdt:.4}");
    println!("FM           {auc_fm:.4}  ({:+.2}% over GBDT)", rela_impr(auc_fm, auc_gbdt)?);
    Ok((auc_lr, auc_fm))
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
