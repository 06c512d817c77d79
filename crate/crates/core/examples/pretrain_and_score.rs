//! Pre-train a classifier on the far-OOD benchmark and compare the three OOD
//! scores before any confidence minimization.

use dcm::datagen::{gen_standard_ood, BenchmarkKind, BenchmarkSpec};
use dcm::dcm::{pretrain, DcmConfig};
use dcm::metrics::{evaluate_model, EvalOptions};
use dcm::netcore::{init_model, Activation};
use dcm::scoring::{ood_score, ScoreKind};

fn main() -> dcm::Result<()> {
    let spec = BenchmarkSpec::canonical(BenchmarkKind::StandardOod);
    let splits = gen_standard_ood(&spec)?;
    println!(
        "train {} / test {} ({} OOD)",
        splits.train.len(),
        splits.test.len(),
        splits.test.n_ood()
    );

    let cfg = DcmConfig::default();
    let init = init_model(&[spec.dim, 64, 64, spec.n_classes], Activation::Relu, 0)?;
    let run = pretrain(&init, &splits.train, &cfg)?;
    println!(
        "pre-training loss {:.4} -> {:.4}",
        run.epoch_losses[0],
        run.epoch_losses.last().unwrap()
    );

    let opts = EvalOptions::default();
    println!(
        "{:<9} {:>7} {:>8} {:>7}",
        "score", "auroc", "fpr@95", "id acc"
    );
    for kind in ScoreKind::ALL {
        let r = evaluate_model(&run.model, &splits.test, kind, &opts)?;
        println!(
            "{:<9} {:>7.4} {:>8.4} {:>7.4}",
            kind.to_string(),
            r.auroc.unwrap(),
            r.fpr_at_95.unwrap(),
            r.id_accuracy.unwrap()
        );
    }

    // per-example scores, higher means more likely OOD
    let scores = ood_score(&run.model, splits.test.features(), ScoreKind::Msp)?;
    let (id, ood): (Vec<_>, Vec<_>) = scores
        .iter()
        .zip(splits.test.domains())
        .partition(|(_, d)| !d.is_ood());
    let mean = |v: &[(&f64, _)]| v.iter().map(|p| *p.0).sum::<f64>() / v.len() as f64;
    println!("mean MSP score: ID {:.4}, OOD {:.4}", mean(&id), mean(&ood));
    Ok(())
}
