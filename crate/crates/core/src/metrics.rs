//! How well sample weights separate clean samples from corrupted ones.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::synth::NoiseRecord;
use crate::weighting::WeightAssignment;

/// ROC AUC of `scores` for the positive class, via the Mann-Whitney U statistic
/// with tied scores sharing their average rank.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC needs at least one sample of each class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (0-based) share the average 1-based rank
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUC of the weights as a score for "label is clean".
pub fn weight_separation(weights: &WeightAssignment, record: &NoiseRecord) -> Result<f64> {
    let lookup: HashMap<&str, f64> = weights
        .ids
        .iter()
        .map(String::as_str)
        .zip(weights.weights.iter().copied())
        .collect();
    if lookup.len() != record.ids.len() {
        return Err(Error::Reference(format!(
            "{} weights for {} recorded samples",
            lookup.len(),
            record.ids.len()
        )));
    }
    let scores = record
        .ids
        .iter()
        .map(|id| {
            lookup
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Reference(format!("no weight for sample {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let clean: Vec<bool> = record.flipped.iter().map(|f| !f).collect();
    roc_auc(&scores, &clean)
}
