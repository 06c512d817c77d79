//! Selective classification under covariate shift. The uncertainty set is
//! the validation examples the pre-trained model gets wrong; the ones it
//! gets right join the fine-tuning set.

use dcm::datagen::{gen_covariate_shift, BenchmarkKind, BenchmarkSpec};
use dcm::dcm::{finetune_sc, partition_val, pretrain, DcmConfig};
use dcm::metrics::{evaluate_model, EvalOptions, SelectivePopulation};
use dcm::netcore::{init_model, Activation};
use dcm::scoring::ScoreKind;

fn main() -> dcm::Result<()> {
    let spec = BenchmarkSpec::canonical(BenchmarkKind::CovariateShift);
    let splits = gen_covariate_shift(&spec)?;
    let cfg = DcmConfig::default();
    let init = init_model(&[spec.dim, 64, 64, spec.n_classes], Activation::Relu, 0)?;
    let base = pretrain(&init, &splits.train, &cfg)?.model;

    let parts = partition_val(&base, &splits.val)?;
    println!(
        "validation: {} correct, {} misclassified",
        parts.correct.len(),
        parts.error.len()
    );
    let tuned = finetune_sc(&base, &splits.train, &splits.val, &cfg)?;
    for w in &tuned.warnings {
        println!("warning: {w}");
    }

    // shifted examples keep valid labels, so all of them count
    let opts = EvalOptions {
        population: SelectivePopulation::All,
        ..EvalOptions::default()
    };
    println!(
        "{:<6} {:>17} {:>17} {:>13}",
        "split", "acc@90 base/dcm", "sc_auc base/dcm", "ece base/dcm"
    );
    for (name, data) in [
        ("id", &splits.test_id),
        ("ood", &splits.test_ood),
        ("mixed", &splits.test_mixed),
    ] {
        let b = evaluate_model(&base, data, ScoreKind::Msp, &opts)?;
        let d = evaluate_model(&tuned.model, data, ScoreKind::Msp, &opts)?;
        println!(
            "{name:<6} {:>8.4}/{:<8.4} {:>8.4}/{:<8.4} {:>6.3}/{:<6.3}",
            b.acc_at(0.9).unwrap(),
            d.acc_at(0.9).unwrap(),
            b.sc_auc.unwrap(),
            d.sc_auc.unwrap(),
            b.ece.unwrap(),
            d.ece.unwrap()
        );
    }
    Ok(())
}
