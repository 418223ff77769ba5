use crate::error::{Error, Result};
use crate::maps::{Polarity, UncertaintyMap};

/// Rank-based AUROC with `positives` scored as the positive class: the
/// probability a random positive outscores a random negative, ties counted half.
pub fn auroc_scores(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::validation("AUROC needs at least one score per class"));
    }
    let mut all: Vec<(f64, bool)> = negatives
        .iter()
        .map(|&v| (v, false))
        .chain(positives.iter().map(|&v| (v, true)))
        .collect();
    if all.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::validation("AUROC scores contain NaN"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = all[i..=j].iter().filter(|(_, p)| *p).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUROC separating out-of-distribution pixels (positives) from
/// in-distribution pixels by their uncertainty.
pub fn ood_auroc(unc_in: &[UncertaintyMap], unc_out: &[UncertaintyMap]) -> Result<f64> {
    if unc_in.is_empty() || unc_out.is_empty() {
        return Err(Error::validation("OoD AUROC needs in- and out-of-distribution maps"));
    }
    if unc_in.iter().chain(unc_out).any(|m| m.polarity() != Polarity::UncertaintyLike) {
        return Err(Error::validation("OoD AUROC needs uncertainty-like maps"));
    }
    let neg: Vec<f64> = unc_in.iter().flat_map(|m| m.values().iter().copied()).collect();
    let pos: Vec<f64> = unc_out.iter().flat_map(|m| m.values().iter().copied()).collect();
    auroc_scores(&neg, &pos)
}
