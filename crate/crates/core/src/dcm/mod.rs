//! Pre-training and the two confidence-minimization fine-tuning procedures:
//! OOD detection with an unlabeled uncertainty set, and selective
//! classification with misclassified validation examples as the uncertainty
//! set.

mod config;
mod sampler;

use serde::{Deserialize, Serialize};

pub use config::DcmConfig;
pub use sampler::{epoch_batches, CyclingSampler};

use crate::datagen::LabeledDataset;
use crate::error::{DcmError, Result};
use crate::losses::dcm_objective;
use crate::netcore::{argmax, Batch, Matrix, MlpModel, Targets};
use crate::rng::rng_for;

pub const WARN_EMPTY_ERROR_SET: &str =
    "validation error set is empty; confidence fine-tuning skipped";

/// Result of a training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: MlpModel,
    /// Mean step objective per epoch.
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Run manifest written next to trained checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub stage: String,
    pub config: DcmConfig,
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
    pub checkpoint: Option<String>,
}

impl TrainingManifest {
    pub fn new(
        stage: &str,
        config: &DcmConfig,
        run: &TrainRun,
        checkpoint: Option<String>,
    ) -> Self {
        TrainingManifest {
            stage: stage.to_string(),
            config: config.clone(),
            epoch_losses: run.epoch_losses.clone(),
            warnings: run.warnings.clone(),
            checkpoint,
        }
    }
}

fn label_batch(data: &LabeledDataset, idx: &[usize]) -> Result<Batch> {
    Batch::new(
        data.features().select_rows(idx),
        Targets::Labels(idx.iter().map(|&i| data.labels()[i]).collect()),
    )
}

fn check_labels(model: &MlpModel, data: &LabeledDataset) -> Result<()> {
    if data.dim() != model.input_dim() {
        return Err(DcmError::shape(format!(
            "dataset has {} features, model expects {}",
            data.dim(),
            model.input_dim()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= model.n_classes()) {
        return Err(DcmError::Index {
            index: bad,
            bound: model.n_classes(),
        });
    }
    Ok(())
}

fn finite(loss: f64, stage: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(DcmError::Numeric(format!("{stage} diverged (loss {loss})")))
    }
}

/// Mini-batch SGD on the cross-entropy of `train`, reshuffled each epoch.
pub fn pretrain(init: &MlpModel, train: &LabeledDataset, cfg: &DcmConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DcmError::config("cannot pretrain on an empty dataset"));
    }
    check_labels(init, train)?;
    let mut model = init.clone();
    let mut rng = rng_for(cfg.seed, "pretrain");
    let mut epoch_losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        let batches = epoch_batches(train.len(), cfg.batch_id, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let (loss, grads) = model.backward(&label_batch(train, idx)?)?;
            total += finite(loss, "pretraining")?;
            model.sgd_step(&grads, cfg.lr_pretrain)?;
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    Ok(TrainRun {
        model,
        epoch_losses,
        warnings: Vec::new(),
    })
}

/// Fine-tunes on `xent(ft) + lambda * conf(unc)`.
///
/// Each step pairs `batch_id` examples of `ft` with `batch_unc` rows of
/// `unc` (fewer if `unc` is smaller), both drawn from endless reshuffled
/// streams. One pass over `ft` is one epoch.
fn finetune_on(
    model: &MlpModel,
    ft: &LabeledDataset,
    unc: &Matrix,
    cfg: &DcmConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if ft.is_empty() {
        return Err(DcmError::config("fine-tuning set is empty"));
    }
    if unc.is_empty() {
        return Err(DcmError::config("uncertainty set is empty"));
    }
    check_labels(model, ft)?;
    if unc.cols() != model.input_dim() {
        return Err(DcmError::shape("uncertainty features have the wrong width"));
    }
    let mut model = model.clone();
    let mut id_stream = CyclingSampler::new(ft.len(), rng_for(cfg.seed, "finetune/id"));
    let mut unc_stream = CyclingSampler::new(unc.rows(), rng_for(cfg.seed, "finetune/unc"));
    let unc_size = cfg.batch_unc.min(unc.rows());
    let steps = ft.len().div_ceil(cfg.batch_id);
    let mut epoch_losses = Vec::with_capacity(cfg.finetune_epochs);
    for _ in 0..cfg.finetune_epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let ft_batch = label_batch(ft, &id_stream.next_batch(cfg.batch_id))?;
            let unc_batch = unc.select_rows(&unc_stream.next_batch(unc_size));
            let (loss, grads) = dcm_objective(&model, &ft_batch, &unc_batch, cfg.lambda)?;
            total += finite(loss.value(), "fine-tuning")?;
            model.sgd_step(&grads, cfg.lr_finetune)?;
        }
        epoch_losses.push(total / steps as f64);
    }
    Ok(TrainRun {
        model,
        epoch_losses,
        warnings: Vec::new(),
    })
}

/// OOD-detection fine-tuning: the unlabeled set is the uncertainty set.
pub fn finetune_ood(
    model: &MlpModel,
    train: &LabeledDataset,
    unlabeled: &Matrix,
    cfg: &DcmConfig,
) -> Result<TrainRun> {
    if unlabeled.is_empty() {
        return Err(DcmError::config("unlabeled set is empty"));
    }
    finetune_on(model, train, unlabeled, cfg)
}

/// Transductive variant: the test inputs themselves are the uncertainty set.
pub fn finetune_transductive(
    model: &MlpModel,
    train: &LabeledDataset,
    test_features: &Matrix,
    cfg: &DcmConfig,
) -> Result<TrainRun> {
    finetune_ood(model, train, test_features, cfg)
}

/// Validation examples split by whether the model classifies them correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct ValPartition {
    pub correct: LabeledDataset,
    pub error: LabeledDataset,
    pub correct_idx: Vec<usize>,
    pub error_idx: Vec<usize>,
}

pub fn partition_val(model: &MlpModel, val: &LabeledDataset) -> Result<ValPartition> {
    if val.is_empty() {
        return Err(DcmError::EmptyInput("validation set"));
    }
    check_labels(model, val)?;
    let logits = model.forward_logits(val.features())?;
    let (correct_idx, error_idx): (Vec<usize>, Vec<usize>) =
        (0..val.len()).partition(|&i| argmax(logits.row(i)) == val.labels()[i]);
    Ok(ValPartition {
        correct: val.subset(&correct_idx),
        error: val.subset(&error_idx),
        correct_idx,
        error_idx,
    })
}

/// Selective-classification fine-tuning: fine-tune on `train ∪ correct`
/// while minimizing confidence on the misclassified validation examples.
/// With no misclassified examples the model is returned unchanged and a
/// warning is recorded.
pub fn finetune_sc(
    model: &MlpModel,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &DcmConfig,
) -> Result<TrainRun> {
    let parts = partition_val(model, val)?;
    if parts.error.is_empty() {
        return Ok(TrainRun {
            model: model.clone(),
            epoch_losses: Vec::new(),
            warnings: vec![WARN_EMPTY_ERROR_SET.to_string()],
        });
    }
    let ft = train.concat(&parts.correct)?;
    finetune_on(model, &ft, parts.error.features(), cfg)
}

#[cfg(test)]
mod tests;
