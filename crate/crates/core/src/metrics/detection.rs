//! Threshold-free OOD detection metrics. OOD is the positive class and
//! higher scores mean "more OOD".

use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};

/// Which class counts as positive when computing precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positive {
    In,
    Out,
}

fn check_sides(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() {
        return Err(DcmError::EmptyInput("no in-distribution scores"));
    }
    if ood.is_empty() {
        return Err(DcmError::EmptyInput("no out-of-distribution scores"));
    }
    Ok(())
}

/// Smallest `k` with `k / n >= frac`, tolerant of rounding in `frac * n`.
pub(crate) fn ceil_count(frac: f64, n: usize) -> usize {
    let k = (frac * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(ood > id) + P(ood == id) / 2`.
pub fn auroc(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64> {
    check_sides(scores_id, scores_ood)?;
    let mut all: Vec<(f64, bool)> = scores_id
        .iter()
        .map(|&s| (s, false))
        .chain(scores_ood.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // average ranks over tie groups, 1-based
    let mut rank_sum_ood = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let ood_in_group = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum_ood += avg_rank * ood_in_group as f64;
        i = j + 1;
    }
    let n_ood = scores_ood.len() as f64;
    let n_id = scores_id.len() as f64;
    let u = rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0;
    Ok(u / (n_ood * n_id))
}

/// Step-wise area under the precision-recall curve:
/// `Σ_k (recall_k - recall_{k-1}) * precision_k` over distinct thresholds.
pub fn aupr(scores_id: &[f64], scores_ood: &[f64], positive: Positive) -> Result<f64> {
    check_sides(scores_id, scores_ood)?;
    // orient so the positive class has the higher scores
    let mut all: Vec<(f64, bool)> = match positive {
        Positive::Out => scores_id
            .iter()
            .map(|&s| (s, false))
            .chain(scores_ood.iter().map(|&s| (s, true)))
            .collect(),
        Positive::In => scores_id
            .iter()
            .map(|&s| (-s, true))
            .chain(scores_ood.iter().map(|&s| (-s, false)))
            .collect(),
    };
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = all.iter().filter(|e| e.1).count() as f64;

    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / n_pos;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// False-positive rate at the largest threshold `t` for which the fraction
/// of OOD scores `>= t` reaches `tpr_target`.
pub fn fpr_at_tpr(scores_id: &[f64], scores_ood: &[f64], tpr_target: f64) -> Result<f64> {
    check_sides(scores_id, scores_ood)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(DcmError::config(format!(
            "tpr target must lie in (0, 1], got {tpr_target}"
        )));
    }
    let mut ood = scores_ood.to_vec();
    ood.sort_by(|a, b| b.total_cmp(a));
    let k = ceil_count(tpr_target, ood.len());
    let threshold = ood[k - 1];
    let fp = scores_id.iter().filter(|&&s| s >= threshold).count();
    Ok(fp as f64 / scores_id.len() as f64)
}
