use crate::error::{Error, Result};

/// Area under the ROC curve via the rank-sum formula; tied scores get
/// midranks, which credits tied positive/negative pairs with one half.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&r| labels[r] == 1).count();
        rank_sum_pos += midrank * pos_in_tie as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Relative improvement of AUC over a baseline, in percent.
pub fn rela_impr(auc_model: f64, auc_baseline: f64) -> Result<f64> {
    if auc_baseline == 0.5 {
        return Err(Error::UndefinedMetric(
            "relative improvement is undefined for a baseline AUC of 0.5".into(),
        ));
    }
    Ok(((auc_model - 0.5) / (auc_baseline - 0.5) - 1.0) * 100.0)
}
