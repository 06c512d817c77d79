//! Fine-tuning on the test inputs themselves versus a held-out uncertainty
//! set drawn from the same mixture.

use dcm::datagen::{gen_standard_ood, BenchmarkKind, BenchmarkSpec};
use dcm::dcm::{finetune_ood, finetune_transductive, pretrain, DcmConfig};
use dcm::metrics::{evaluate_model, EvalOptions};
use dcm::netcore::{init_model, Activation};
use dcm::scoring::ScoreKind;

fn main() -> dcm::Result<()> {
    let opts = EvalOptions::default();
    let cfg = DcmConfig::default();
    println!(
        "{:>4} {:>9} {:>9} {:>13}",
        "seed", "baseline", "dcm", "transductive"
    );
    for seed in 0..3 {
        let spec = BenchmarkSpec {
            seed,
            ..BenchmarkSpec::canonical(BenchmarkKind::StandardOod)
        };
        let splits = gen_standard_ood(&spec)?;
        let init = init_model(&[spec.dim, 64, 64, spec.n_classes], Activation::Relu, seed)?;
        let base = pretrain(&init, &splits.train, &cfg)?.model;
        let held_out =
            finetune_ood(&base, &splits.train, splits.uncertainty.features(), &cfg)?.model;
        let on_test =
            finetune_transductive(&base, &splits.train, splits.test.features(), &cfg)?.model;
        let auroc =
            |m| evaluate_model(m, &splits.test, ScoreKind::Msp, &opts).map(|r| r.auroc.unwrap());
        println!(
            "{seed:>4} {:>9.4} {:>9.4} {:>13.4}",
            auroc(&base)?,
            auroc(&held_out)?,
            auroc(&on_test)?
        );
    }
    Ok(())
}
