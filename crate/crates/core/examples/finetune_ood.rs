//! Confidence minimization for near-OOD detection. The uncertainty set is an
//! unlabeled mix of ID and OOD inputs; fine-tuning keeps the training set's
//! cross-entropy and pushes predictions on the mix towards uniform.

use dcm::datagen::{gen_near_ood, BenchmarkKind, BenchmarkSpec};
use dcm::dcm::{finetune_ood, pretrain, DcmConfig};
use dcm::metrics::{evaluate_model, EvalOptions};
use dcm::netcore::{init_model, Activation};
use dcm::scoring::ScoreKind;

fn main() -> dcm::Result<()> {
    let lambda: f64 = std::env::args()
        .nth(1)
        .map_or(0.5, |s| s.parse().expect("lambda must be a number"));
    let spec = BenchmarkSpec::canonical(BenchmarkKind::NearOod);
    let splits = gen_near_ood(&spec)?;
    let cfg = DcmConfig {
        lambda,
        ..DcmConfig::default()
    };

    let init = init_model(&[spec.dim, 64, 64, spec.n_classes], Activation::Relu, 1)?;
    let base = pretrain(&init, &splits.train, &cfg)?.model;
    let tuned = finetune_ood(&base, &splits.train, splits.uncertainty.features(), &cfg)?;

    let opts = EvalOptions::default();
    println!(
        "lambda = {lambda}, uncertainty set {} ({} OOD)",
        splits.uncertainty.len(),
        splits.uncertainty.n_ood()
    );
    println!(
        "{:<9} {:>14} {:>14} {:>9}",
        "score", "auroc base", "auroc dcm", "fpr@95"
    );
    for kind in ScoreKind::ALL {
        let b = evaluate_model(&base, &splits.test, kind, &opts)?;
        let d = evaluate_model(&tuned.model, &splits.test, kind, &opts)?;
        println!(
            "{:<9} {:>14.4} {:>14.4} {:>4.2}->{:.2}",
            kind.to_string(),
            b.auroc.unwrap(),
            d.auroc.unwrap(),
            b.fpr_at_95.unwrap(),
            d.fpr_at_95.unwrap()
        );
    }
    let acc =
        |m| evaluate_model(m, &splits.test, ScoreKind::Msp, &opts).map(|r| r.id_accuracy.unwrap());
    println!(
        "ID accuracy {:.4} -> {:.4}",
        acc(&base)?,
        acc(&tuned.model)?
    );
    Ok(())
}
