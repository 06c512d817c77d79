use serde::{Deserialize, Serialize};

use super::detection::{aupr, auroc, fpr_at_tpr, Positive};
use super::selective::{acc_at_cov, cov_at_acc, ece, sc_auc, selective_curve, SelectiveCurve};
use crate::datagen::LabeledDataset;
use crate::error::{DcmError, Result};
use crate::netcore::{argmax, MlpModel};
use crate::scoring::{ScoreKind, ScoreRecord};

/// Inputs to every metric for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    /// OOD score, higher means more OOD.
    pub score: f64,
    pub is_ood: bool,
    pub correct: bool,
    /// Maximum softmax probability, when known.
    pub confidence: Option<f64>,
}

/// Which examples enter the selective-classification metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectivePopulation {
    /// Only ID-tagged examples; OOD examples in detection tasks carry no label.
    #[default]
    IdOnly,
    /// Every example, for shifted test sets whose labels stay valid.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub n_bins: usize,
    pub coverages: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub population: SelectivePopulation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_bins: 15,
            coverages: vec![0.8, 0.9, 0.95],
            accuracies: vec![0.9, 0.95, 0.99],
            population: SelectivePopulation::IdOnly,
        }
    }
}

/// Detection and selective-classification metrics for one (model, score,
/// test set) triple. Detection metrics are absent when the test set lacks
/// one of the two domains; selective metrics are absent when confidences
/// are unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub score_kind: ScoreKind,
    pub auroc: Option<f64>,
    pub aupr_in: Option<f64>,
    pub aupr_out: Option<f64>,
    pub fpr_at_95: Option<f64>,
    pub fpr_at_99: Option<f64>,
    pub ece: Option<f64>,
    /// `(coverage, accuracy)` pairs.
    pub acc_at_cov: Vec<(f64, f64)>,
    /// `(accuracy, coverage)` pairs.
    pub cov_at_acc: Vec<(f64, f64)>,
    pub sc_auc: Option<f64>,
    pub id_accuracy: Option<f64>,
}

/// Fixed leading columns of [`EvalReport::csv_header`].
pub const REPORT_COLUMNS: [&str; 9] = [
    "auroc",
    "aupr_in",
    "aupr_out",
    "fpr_at_95",
    "fpr_at_99",
    "ece",
    "sc_auc",
    "id_accuracy",
    "score_kind",
];

fn pct(v: f64) -> String {
    let p = v * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

impl EvalReport {
    /// The default AUPR (OOD as positive class).
    pub fn aupr(&self) -> Option<f64> {
        self.aupr_out
    }

    pub fn acc_at(&self, coverage: f64) -> Option<f64> {
        self.acc_at_cov
            .iter()
            .find(|(c, _)| (c - coverage).abs() < 1e-12)
            .map(|p| p.1)
    }

    pub fn cov_at(&self, accuracy: f64) -> Option<f64> {
        self.cov_at_acc
            .iter()
            .find(|(a, _)| (a - accuracy).abs() < 1e-12)
            .map(|p| p.1)
    }

    /// Column order: the fixed columns, then `acc_at_cov_<pct>` per coverage,
    /// then `cov_at_acc_<pct>` per accuracy.
    pub fn csv_header(opts: &EvalOptions) -> Vec<String> {
        let mut h: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
        h.extend(
            opts.coverages
                .iter()
                .map(|c| format!("acc_at_cov_{}", pct(*c))),
        );
        h.extend(
            opts.accuracies
                .iter()
                .map(|a| format!("cov_at_acc_{}", pct(*a))),
        );
        h
    }

    /// Values in [`EvalReport::csv_header`] order; absent metrics are empty.
    pub fn csv_values(&self, opts: &EvalOptions) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        let mut row = vec![
            opt(self.auroc),
            opt(self.aupr_in),
            opt(self.aupr_out),
            opt(self.fpr_at_95),
            opt(self.fpr_at_99),
            opt(self.ece),
            opt(self.sc_auc),
            opt(self.id_accuracy),
            self.score_kind.to_string(),
        ];
        row.extend(opts.coverages.iter().map(|&c| opt(self.acc_at(c))));
        row.extend(opts.accuracies.iter().map(|&a| opt(self.cov_at(a))));
        row
    }

    pub fn to_csv(&self, opts: &EvalOptions) -> String {
        format!(
            "{}\n{}\n",
            Self::csv_header(opts).join(","),
            self.csv_values(opts).join(",")
        )
    }
}

/// Computes every metric that the examples support.
pub fn report_from_examples(
    kind: ScoreKind,
    examples: &[ScoredExample],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(DcmError::EmptyInput("no examples to evaluate"));
    }
    let id: Vec<f64> = examples
        .iter()
        .filter(|e| !e.is_ood)
        .map(|e| e.score)
        .collect();
    let ood: Vec<f64> = examples
        .iter()
        .filter(|e| e.is_ood)
        .map(|e| e.score)
        .collect();
    let detect = !id.is_empty() && !ood.is_empty();
    let when = |f: &dyn Fn() -> Result<f64>| -> Result<Option<f64>> {
        if detect {
            f().map(Some)
        } else {
            Ok(None)
        }
    };

    let selective: Vec<&ScoredExample> = examples
        .iter()
        .filter(|e| opts.population == SelectivePopulation::All || !e.is_ood)
        .collect();
    let confidences: Option<Vec<f64>> = selective.iter().map(|e| e.confidence).collect();
    let correct: Vec<bool> = selective.iter().map(|e| e.correct).collect();
    let (ece_v, curve): (Option<f64>, Option<SelectiveCurve>) = match confidences {
        Some(conf) if !conf.is_empty() => (
            Some(ece(&conf, &correct, opts.n_bins)?),
            Some(selective_curve(&conf, &correct)?),
        ),
        _ => (None, None),
    };
    let acc_at = match &curve {
        Some(c) => opts
            .coverages
            .iter()
            .map(|&cov| Ok((cov, acc_at_cov(c, cov)?)))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let cov_at = match &curve {
        Some(c) => opts
            .accuracies
            .iter()
            .map(|&acc| Ok((acc, cov_at_acc(c, acc)?)))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let id_correct: Vec<bool> = examples
        .iter()
        .filter(|e| !e.is_ood)
        .map(|e| e.correct)
        .collect();
    let id_accuracy = (!id_correct.is_empty())
        .then(|| id_correct.iter().filter(|&&c| c).count() as f64 / id_correct.len() as f64);

    Ok(EvalReport {
        score_kind: kind,
        auroc: when(&|| auroc(&id, &ood))?,
        aupr_in: when(&|| aupr(&id, &ood, Positive::In))?,
        aupr_out: when(&|| aupr(&id, &ood, Positive::Out))?,
        fpr_at_95: when(&|| fpr_at_tpr(&id, &ood, 0.95))?,
        fpr_at_99: when(&|| fpr_at_tpr(&id, &ood, 0.99))?,
        ece: ece_v,
        acc_at_cov: acc_at,
        cov_at_acc: cov_at,
        sc_auc: curve.as_ref().map(sc_auc).transpose()?,
        id_accuracy,
    })
}

/// Scores `data` with `model` and evaluates. Selective metrics always use
/// the maximum softmax probability as confidence.
pub fn evaluate_model(
    model: &MlpModel,
    data: &LabeledDataset,
    kind: ScoreKind,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let logits = model.forward_logits(data.features())?;
    let examples: Vec<ScoredExample> = logits
        .row_iter()
        .enumerate()
        .map(|(i, z)| ScoredExample {
            score: kind.score_logits(z),
            is_ood: data.domains()[i].is_ood(),
            correct: argmax(z) == data.labels()[i],
            confidence: Some(-ScoreKind::Msp.score_logits(z)),
        })
        .collect();
    report_from_examples(kind, &examples, opts)
}

/// Evaluates a score dump holding a single score kind. Confidence is only
/// recoverable from MSP dumps.
pub fn evaluate_records(records: &[ScoreRecord], opts: &EvalOptions) -> Result<EvalReport> {
    let first = records
        .first()
        .ok_or(DcmError::EmptyInput("score dump has no rows"))?;
    let kind = first.score_kind;
    if records.iter().any(|r| r.score_kind != kind) {
        return Err(DcmError::format(
            "score csv",
            "rows mix several score kinds",
        ));
    }
    let examples: Vec<ScoredExample> = records
        .iter()
        .map(|r| ScoredExample {
            score: r.score,
            is_ood: r.domain_tag.is_ood(),
            correct: r.prediction == r.label,
            confidence: (kind == ScoreKind::Msp).then_some(-r.score),
        })
        .collect();
    report_from_examples(kind, &examples, opts)
}
