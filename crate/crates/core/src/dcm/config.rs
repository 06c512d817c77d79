use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcmConfig {
    /// Weight of the confidence loss.
    pub lambda: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    /// ID examples per step.
    pub batch_id: usize,
    /// Uncertainty examples per fine-tuning step.
    pub batch_unc: usize,
    pub seed: u64,
}

impl Default for DcmConfig {
    fn default() -> Self {
        DcmConfig {
            lambda: 0.5,
            pretrain_epochs: 200,
            finetune_epochs: 20,
            lr_pretrain: 0.05,
            lr_finetune: 0.05,
            batch_id: 32,
            batch_unc: 64,
            seed: 0,
        }
    }
}

impl DcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DcmError::config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        for (name, lr) in [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_finetune", self.lr_finetune),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(DcmError::config(format!(
                    "{name} must be positive, got {lr}"
                )));
            }
        }
        for (name, v) in [
            ("pretrain_epochs", self.pretrain_epochs),
            ("finetune_epochs", self.finetune_epochs),
            ("batch_id", self.batch_id),
            ("batch_unc", self.batch_unc),
        ] {
            if v == 0 {
                return Err(DcmError::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}
