//! Data-driven confidence minimization.
//!
//! Small dense classifiers are pre-trained with cross-entropy and then
//! fine-tuned on `xent(ft) + λ · conf(unc)`, where `conf` is the
//! cross-entropy against the uniform label distribution evaluated on an
//! *uncertainty set*. For OOD detection the uncertainty set is an unlabeled
//! mix of ID and OOD inputs; for selective classification it is the set of
//! misclassified validation examples. The crate bundles synthetic
//! benchmarks, the standard detection and selective-classification
//! metrics, closed-form checks of the objective's optimum, and an
//! experiment harness.
//!
//! Module map:
//!
//! - [`netcore`]: MLP forward/backward, SGD, `DCM1` checkpoints
//! - [`losses`]: cross-entropy, confidence loss, combined objective
//! - [`dcm`]: pre-training and fine-tuning procedures
//! - [`scoring`]: MSP / MaxLogit / Energy OOD scores
//! - [`metrics`]: AUROC, AUPR, FPR@TPR, ECE, selective curves
//! - [`datagen`]: synthetic benchmarks
//! - [`theory`]: optimal smoothed distribution, Pinsker bounds, separation certificates
//! - [`harness`]: config parsing, experiments, CLI

pub mod datagen;
pub mod dcm;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod rng;
pub mod scoring;
pub mod theory;

pub use error::{DcmError, Result};
