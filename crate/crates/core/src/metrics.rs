//! Frame-level evaluation metrics.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::corpus::proportional_range;
use crate::{Error, Result};

/// Default threshold above which a segment counts as an alarm.
pub const DEFAULT_FAR_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: scores.len(), found: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Indices of `scores` sorted by descending score.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Area under the ROC curve as the Mann–Whitney statistic, tied pairs
/// counting one half.
///
/// Runs in `O(n log n)`: scores are sorted once and tied groups are credited
/// in bulk.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let order = descending_order(scores);
    // Walking from the highest score, every positive outranks all negatives
    // not yet seen, and ties with negatives in its own group.
    let mut negatives_below = neg as f64;
    let mut concordant = 0.0;
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        let (mut group_pos, mut group_neg) = (0.0, 0.0);
        while end < order.len() && scores[order[end]].total_cmp(&s) == Ordering::Equal {
            if labels[order[end]] != 0 {
                group_pos += 1.0;
            } else {
                group_neg += 1.0;
            }
            end += 1;
        }
        negatives_below -= group_neg;
        concordant += group_pos * negatives_below + 0.5 * group_pos * group_neg;
        start = end;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}

/// ROC points from a threshold sweep: `(+inf)` first, one point per distinct
/// score (predicting positive when `score >= threshold`), then `(-inf)`.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let order = descending_order(scores);
    let mut points = Vec::new();
    points.push(RocPoint { threshold: f64::INFINITY, true_positive_rate: 0.0, false_positive_rate: 0.0 });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]].total_cmp(&s) == Ordering::Equal {
            if labels[order[k]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: s,
            true_positive_rate: tp as f64 / pos as f64,
            false_positive_rate: fp as f64 / neg as f64,
        });
    }
    points.push(RocPoint { threshold: f64::NEG_INFINITY, true_positive_rate: 1.0, false_positive_rate: 1.0 });
    Ok(points)
}

/// Trapezoidal area under a curve ordered by false positive rate.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let dx = w[1].false_positive_rate - w[0].false_positive_rate;
            dx * (w[0].true_positive_rate + w[1].true_positive_rate) / 2.0
        })
        .sum()
}

/// Spreads segment scores over frames using the segment-to-frame mapping.
pub fn expand_scores_to_frames(scores: &[f64], n_frames: usize) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("segment scores"));
    }
    if n_frames == 0 {
        return Err(Error::Empty("video frames"));
    }
    let n = scores.len();
    let mut frames = Vec::with_capacity(n_frames);
    for (i, &s) in scores.iter().enumerate() {
        let range = proportional_range(i, n_frames, n);
        frames.extend(core::iter::repeat_n(s, range.len()));
    }
    Ok(frames)
}

/// Percentage of scores strictly above `threshold`.
pub fn false_alarm_percent(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("normal segment scores"));
    }
    let alarms = scores.iter().filter(|&&s| s > threshold).count();
    Ok(100.0 * alarms as f64 / scores.len() as f64)
}

/// Element-wise mean over score lists of equal length.
pub fn mean_scores(variants: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = variants.first().ok_or(Error::Empty("score variants"))?;
    let mut out = first.clone();
    for v in &variants[1..] {
        if v.len() != out.len() {
            return Err(Error::LengthMismatch { expected: out.len(), found: v.len() });
        }
        for (o, s) in out.iter_mut().zip(v) {
            *o += s;
        }
    }
    if variants.len() > 1 {
        let k = variants.len() as f64;
        for o in &mut out {
            *o /= k;
        }
    }
    Ok(out)
}
