//! OOD scores derived from model outputs. Every score is oriented so that a
//! higher value means "more likely OOD".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{DcmError, Result};
use crate::netcore::{argmax, log_sum_exp, Matrix, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "maxlogit")]
    MaxLogit,
    #[serde(rename = "energy")]
    Energy,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Msp, ScoreKind::MaxLogit, ScoreKind::Energy];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::MaxLogit => "maxlogit",
            ScoreKind::Energy => "energy",
        }
    }

    /// Score of one logit row.
    pub fn score_logits(self, logits: &[f64]) -> f64 {
        match self {
            ScoreKind::Msp => -max_softmax(logits),
            ScoreKind::MaxLogit => -logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ScoreKind::Energy => -log_sum_exp(logits),
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = DcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(ScoreKind::Msp),
            "maxlogit" | "max_logit" => Ok(ScoreKind::MaxLogit),
            "energy" => Ok(ScoreKind::Energy),
            other => Err(DcmError::config(format!("unknown score kind `{other}`"))),
        }
    }
}

/// `max_i softmax(z)_i` computed as `1 / Σ_j exp(z_j - max z)`.
fn max_softmax(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1.0 / logits.iter().map(|z| (z - max).exp()).sum::<f64>()
}

pub fn scores_from_logits(logits: &Matrix, kind: ScoreKind) -> Vec<f64> {
    logits.row_iter().map(|r| kind.score_logits(r)).collect()
}

pub fn ood_score(model: &MlpModel, inputs: &Matrix, kind: ScoreKind) -> Result<Vec<f64>> {
    Ok(scores_from_logits(&model.forward_logits(inputs)?, kind))
}

/// Maximum softmax probability per row.
pub fn msp_confidence(model: &MlpModel, inputs: &Matrix) -> Result<Vec<f64>> {
    let logits = model.forward_logits(inputs)?;
    Ok(logits.row_iter().map(max_softmax).collect())
}

/// Same as [`msp_confidence`] from probabilities already computed.
pub fn msp_of_probs(probs: &Matrix) -> Vec<f64> {
    probs
        .row_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// One line of a score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub example_id: usize,
    pub domain_tag: crate::datagen::Domain,
    pub label: usize,
    pub prediction: usize,
    pub score_kind: ScoreKind,
    pub score: f64,
}

/// Scores every example of `data` under each requested kind.
pub fn score_dataset(
    model: &MlpModel,
    data: &LabeledDataset,
    kinds: &[ScoreKind],
) -> Result<Vec<ScoreRecord>> {
    let logits = model.forward_logits(data.features())?;
    let preds: Vec<usize> = logits.row_iter().map(argmax).collect();
    let mut out = Vec::with_capacity(kinds.len() * data.len());
    for &kind in kinds {
        for (i, row) in logits.row_iter().enumerate() {
            out.push(ScoreRecord {
                example_id: i,
                domain_tag: data.domains()[i],
                label: data.labels()[i],
                prediction: preds[i],
                score_kind: kind,
                score: kind.score_logits(row),
            });
        }
    }
    Ok(out)
}

pub const SCORE_CSV_HEADER: &str = "example_id,domain_tag,label,prediction,score_kind,score";

pub fn scores_to_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from(SCORE_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.example_id, r.domain_tag, r.label, r.prediction, r.score_kind, r.score
        ));
    }
    out
}

pub fn scores_from_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DcmError::format("score csv", e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != SCORE_CSV_HEADER {
        return Err(DcmError::format(
            "score csv",
            format!("header must be `{SCORE_CSV_HEADER}`"),
        ));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| DcmError::format("score csv", e.to_string())))
        .collect()
}
