//! Training cross-entropy, the uniform-target confidence loss, and their
//! weighted sum, the objective minimized during fine-tuning.

use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};
use crate::netcore::{Batch, GradientSet, Matrix, MlpModel, Targets, PROB_FLOOR};

/// A loss in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LossValue(pub f64);

impl LossValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_rows(probs: &Matrix) -> Result<()> {
    if probs.is_empty() {
        return Err(DcmError::EmptyInput("probability matrix has no rows"));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(DcmError::Numeric(format!("row {i} is not a distribution")));
        }
    }
    Ok(())
}

/// Mean `-ln p[label]` over rows.
pub fn xent_loss(probs: &Matrix, labels: &[usize]) -> Result<LossValue> {
    check_rows(probs)?;
    if labels.len() != probs.rows() {
        return Err(DcmError::shape(format!(
            "{} rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &y) in probs.row_iter().zip(labels) {
        let p = *row.get(y).ok_or(DcmError::Index {
            index: y,
            bound: probs.cols(),
        })?;
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(LossValue(total / labels.len() as f64))
}

/// Cross-entropy against the uniform distribution, averaged over rows:
/// `-(1/C) Σ_i ln p_i`, which equals `ln C + KL(U || p)`.
pub fn conf_loss(probs: &Matrix) -> Result<LossValue> {
    check_rows(probs)?;
    let c = probs.cols() as f64;
    let total: f64 = probs
        .row_iter()
        .map(|row| -row.iter().map(|p| p.max(PROB_FLOOR).ln()).sum::<f64>() / c)
        .sum();
    Ok(LossValue(total / probs.rows() as f64))
}

/// Confidence-loss value and gradient on a set of unlabeled inputs.
pub fn confidence_backward(model: &MlpModel, inputs: &Matrix) -> Result<(f64, GradientSet)> {
    let batch = Batch::new(
        inputs.clone(),
        Targets::uniform(inputs.rows(), model.n_classes()),
    )?;
    model.backward(&batch)
}

/// `xent(ft_batch) + lambda * conf(unc_inputs)` and its gradient.
///
/// The uncertainty batch may be empty, in which case only the first term
/// contributes.
pub fn dcm_objective(
    model: &MlpModel,
    ft_batch: &Batch,
    unc_inputs: &Matrix,
    lambda: f64,
) -> Result<(LossValue, GradientSet)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DcmError::config(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let (xent, mut grads) = model.backward(ft_batch)?;
    if unc_inputs.is_empty() || lambda == 0.0 {
        if !unc_inputs.is_empty() && unc_inputs.cols() != model.input_dim() {
            return Err(DcmError::shape("uncertainty inputs have the wrong width"));
        }
        return Ok((LossValue(xent), grads));
    }
    let (conf, conf_grads) = confidence_backward(model, unc_inputs)?;
    grads.add_scaled(&conf_grads, lambda)?;
    Ok((LossValue(xent + lambda * conf), grads))
}
