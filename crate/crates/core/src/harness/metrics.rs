//! Ranking and classification metrics.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("metric needs both classes present")]
    SingleClass,
    #[error("metric needs at least one positive label")]
    NoPositives,
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    match scores.iter().find(|s| !s.is_finite()) {
        Some(s) => Err(MetricError::NonFinite(*s)),
        None => Ok(()),
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from mid-ranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps mid-ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_mid * tied_pos;
        i = j + 1;
    }
    let (pos, neg) = (pos as u64, neg as u64);
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision: mean of the precision at each positive when items
/// are ranked by descending score, equal scores keeping input order.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

/// F1 and accuracy. With no positive predictions and no positive labels F1
/// is 1; any other zero denominator gives 0.
pub fn f1_accuracy(predictions: &[bool], labels: &[bool]) -> Result<(f64, f64), MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::Length(predictions.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = predictions.len();
    let accuracy = if n == 0 { 1.0 } else { (tp + tn) as f64 / n as f64 };
    let f1 = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok((f1, accuracy))
}
