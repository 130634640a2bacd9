//! Evaluation metrics: MAE, ROC-AUC, PR-AUC (average precision), Spearman.
//!
//! All four take `(predictions, labels)` of equal length ≥ 2. The AUC metrics
//! require binary labels (exactly 0.0 or 1.0) with both classes present.

use thiserror::Error;

/// Errors raised by the metric functions.
#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {preds} predictions vs {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("need at least 2 points, got {0}")]
    TooFew(usize),
    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,
    #[error("label {0} is not binary (expected 0.0 or 1.0)")]
    NonBinaryLabel(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
}

fn check_common(preds: &[f64], labels: &[f64]) -> Result<(), MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.len() < 2 {
        return Err(MetricError::TooFew(preds.len()));
    }
    if preds.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite("predictions"));
    }
    if labels.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite("labels"));
    }
    Ok(())
}

fn check_binary(labels: &[f64]) -> Result<(usize, usize), MetricError> {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &y in labels {
        if y == 1.0 {
            pos += 1;
        } else if y == 0.0 {
            neg += 1;
        } else {
            return Err(MetricError::NonBinaryLabel(y));
        }
    }
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((pos, neg))
}

/// Mean absolute error.
pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_common(preds, labels)?;
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum();
    Ok(total / preds.len() as f64)
}

/// ROC-AUC: the probability that a uniformly random positive outranks a
/// uniformly random negative, with score ties counting one half.
pub fn roc_auc(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_common(preds, labels)?;
    let (pos, neg) = check_binary(labels)?;
    let mut wins = 0.0f64;
    for (sp, yp) in preds.iter().zip(labels) {
        if *yp != 1.0 {
            continue;
        }
        for (sn, yn) in preds.iter().zip(labels) {
            if *yn != 0.0 {
                continue;
            }
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// PR-AUC as average precision: the sum over descending score thresholds of
/// (recall step) × (precision at that threshold). Tied scores form a single
/// threshold group.
pub fn pr_auc(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_common(preds, labels)?;
    let (pos, _neg) = check_binary(labels)?;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].partial_cmp(&preds[a]).expect("finite scores"));
    let mut ap = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        // advance over one group of tied scores
        let score = preds[order[i]];
        while i < order.len() && preds[order[i]] == score {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Fractional ranks (1-based), with tied values receiving the average of the
/// ranks they span.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0f64; values.len()];
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: the Pearson correlation of fractional ranks.
pub fn spearman(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_common(preds, labels)?;
    let rp = fractional_ranks(preds);
    let rl = fractional_ranks(labels);
    let n = rp.len() as f64;
    let mp = rp.iter().sum::<f64>() / n;
    let ml = rl.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vl = 0.0;
    for (a, b) in rp.iter().zip(&rl) {
        cov += (a - mp) * (b - ml);
        vp += (a - mp) * (a - mp);
        vl += (b - ml) * (b - ml);
    }
    if vp == 0.0 || vl == 0.0 {
        return Err(MetricError::Degenerate("constant ranks"));
    }
    Ok(cov / (vp * vl).sqrt())
}
