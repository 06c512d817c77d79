//! Dense feed-forward classifier with analytic backpropagation.

mod checkpoint;
mod matrix;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use matrix::Matrix;
pub use model::{
    argmax, init_model, log_sum_exp, softmax, softmax_rows, Activation, Batch, GradientSet,
    MlpModel, Targets, PROB_FLOOR,
};

/// Free-function form of [`MlpModel::forward_logits`].
pub fn forward_logits(model: &MlpModel, inputs: &Matrix) -> crate::Result<Matrix> {
    model.forward_logits(inputs)
}

/// Free-function form of [`MlpModel::backward`].
pub fn backward(model: &MlpModel, batch: &Batch) -> crate::Result<(f64, GradientSet)> {
    model.backward(batch)
}

/// Returns `model` after one SGD step.
pub fn sgd_step(model: &MlpModel, grads: &GradientSet, lr: f64) -> crate::Result<MlpModel> {
    model.stepped(grads, lr)
}
