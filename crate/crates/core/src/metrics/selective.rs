//! Calibration and selective-classification metrics.

use serde::{Deserialize, Serialize};

use super::detection::ceil_count;
use crate::error::{DcmError, Result};

/// Expected calibration error over `n_bins` equal-width confidence bins.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(DcmError::shape(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(DcmError::config("ece needs at least one bin"));
    }
    if confidences.is_empty() {
        return Err(DcmError::EmptyInput("no confidences"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(DcmError::Numeric(format!("confidence {c} outside [0, 1]")));
    }
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * n_bins as f64).floor() as usize).min(n_bins - 1);
        conf_sum[b] += c;
        counts[b] += 1;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| {
            let m = counts[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum())
}

/// Accuracy of the `k` most confident predictions for every `k = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveCurve {
    /// `(coverage, accuracy)` with coverage `k / n`.
    pub points: Vec<(f64, f64)>,
}

impl SelectiveCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Two-column CSV for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coverage,accuracy\n");
        for (c, a) in &self.points {
            out.push_str(&format!("{c},{a}\n"));
        }
        out
    }
}

/// Sorts by confidence (descending, stable) and records prefix accuracies.
pub fn selective_curve(confidences: &[f64], correct: &[bool]) -> Result<SelectiveCurve> {
    if confidences.len() != correct.len() {
        return Err(DcmError::shape("confidence and correctness lengths differ"));
    }
    if confidences.is_empty() {
        return Err(DcmError::EmptyInput("no predictions for a selective curve"));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let n = order.len();
    let mut hits = 0usize;
    let points = order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            hits += usize::from(correct[i]);
            ((k + 1) as f64 / n as f64, hits as f64 / (k + 1) as f64)
        })
        .collect();
    Ok(SelectiveCurve { points })
}

/// Accuracy over the `ceil(cov * n)` most confident predictions.
pub fn acc_at_cov(curve: &SelectiveCurve, cov: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(DcmError::EmptyInput("empty selective curve"));
    }
    if !(cov > 0.0 && cov <= 1.0) {
        return Err(DcmError::config(format!(
            "coverage must lie in (0, 1], got {cov}"
        )));
    }
    let k = ceil_count(cov, curve.len());
    Ok(curve.points[k - 1].1)
}

/// Largest coverage whose selective accuracy is at least `acc`; 0 if none.
pub fn cov_at_acc(curve: &SelectiveCurve, acc: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(DcmError::EmptyInput("empty selective curve"));
    }
    if !(acc > 0.0 && acc <= 1.0) {
        return Err(DcmError::config(format!(
            "accuracy must lie in (0, 1], got {acc}"
        )));
    }
    Ok(curve
        .points
        .iter()
        .rev()
        .find(|(_, a)| *a >= acc - 1e-12)
        .map_or(0.0, |(c, _)| *c))
}

/// Rectangle-rule area under the accuracy-coverage curve.
pub fn sc_auc(curve: &SelectiveCurve) -> Result<f64> {
    if curve.is_empty() {
        return Err(DcmError::EmptyInput("empty selective curve"));
    }
    Ok(curve.points.iter().map(|p| p.1).sum::<f64>() / curve.len() as f64)
}
