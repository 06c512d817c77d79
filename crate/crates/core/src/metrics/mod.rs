//! OOD-detection metrics (AUROC, AUPR, FPR at fixed TPR) and
//! selective-classification metrics (ECE, Acc@Cov, Cov@Acc, curve AUC).

mod detection;
mod report;
mod selective;

pub use detection::{aupr, auroc, fpr_at_tpr, Positive};
pub use report::{
    evaluate_model, evaluate_records, report_from_examples, EvalOptions, EvalReport, ScoredExample,
    SelectivePopulation, REPORT_COLUMNS,
};
pub use selective::{acc_at_cov, cov_at_acc, ece, sc_auc, selective_curve, SelectiveCurve};
