//! Combination-strength matrices and the sampling-rate study.

use crossfeat::aggregate::Operator;
use crossfeat::analysis::{analyze, dowg_study, emit_reports, CsMethod, DowgConfig};
use crossfeat::construct::FeatureSpec;
use crossfeat::dataset::Indicator;
use crossfeat::pipeline::{run_on, RunConfig};
use crossfeat::synth::{planted, PlantedConfig, DAY};

pub fn run_example() -> crossfeat::Result<(usize, usize)> {
    let p = PlantedConfig { n_rows: 10_000, n_fields: 5, pair: Some((0, 4)), seed: 2, ..Default::default() };
    let d = planted(&p)?;
    let mut cfg = RunConfig::new(p.schema());
    cfg.features.windows = vec![3];
    cfg.features.window_unit = DAY;
    cfg.features.operators = vec![Operator::Mean, Operator::Count];
    cfg.search.patience = 3;
    cfg.sampling.rate = 0.5;
    cfg.analysis.dowg_study = DowgConfig { rates: vec![0.05, 0.5, 1.0], repeats: 5, ..Default::default() };

    let out = run_on(&d, &cfg)?;
    println!("{}", out.template);
    let artifacts = analyze(&d, &cfg, &out.template, Some(out.report), Vec::new())?;
    let strongest = |m: CsMethod| {
        let cs = artifacts.cs.iter().find(|c| c.method == m).unwrap();
        let mut best = (0, 1);
        for i in 0..cs.m() {
            for j in i + 1..cs.m() {
                if cs.values[i][j] > cs.values[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        println!("{:?}: strongest pair {best:?}, sparsity {:.2}", m, cs.sparsity());
        best
    };
    let importance = strongest(CsMethod::Importance);
    strongest(CsMethod::Fm);

    // importance gaps on samples versus the full log; one statistic per key
    let w = Some(3 * DAY);
    let specs = [
        FeatureSpec::pair(0, 4, Indicator::Label, Operator::Mean, w),
        FeatureSpec::pair(1, 2, Indicator::Label, Operator::Mean, w),
        FeatureSpec::single(0, Indicator::Label, Operator::Mean, w),
        FeatureSpec::single(4, Indicator::Label, Operator::Mean, w),
    ];
    let study = dowg_study(&d, &specs, false, &cfg.analysis.dowg_study)?;
    let top = (study.picked[0], study.picked[1]);
    for (rate, med) in study.medians(top) {
        println!("rate {rate:<5} median DoWG {med:.4}");
    }
    let dir = std::env::temp_dir().join("crossfeat-interpretability");
    println!("wrote {:?}", emit_reports(&artifacts, &dir)?);
    Ok(importance)
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
