//! Detection and selective-classification metrics on a tiny hand-made set.

use dcm::metrics::{
    acc_at_cov, aupr, auroc, cov_at_acc, ece, fpr_at_tpr, report_from_examples, sc_auc,
    selective_curve, EvalOptions, Positive, ScoredExample,
};
use dcm::scoring::ScoreKind;

fn main() -> dcm::Result<()> {
    // OOD scores: higher means more OOD
    let id = [0.1, 0.4, 0.35, 0.2];
    let ood = [0.3, 0.9, 0.8];
    println!("auroc        {:.4}", auroc(&id, &ood)?);
    println!("aupr (out)   {:.4}", aupr(&id, &ood, Positive::Out)?);
    println!("aupr (in)    {:.4}", aupr(&id, &ood, Positive::In)?);
    println!("fpr@tpr 95   {:.4}", fpr_at_tpr(&id, &ood, 0.95)?);

    let conf = [0.95, 0.9, 0.85, 0.7, 0.6, 0.55];
    let correct = [true, true, false, true, false, false];
    let curve = selective_curve(&conf, &correct)?;
    println!("\ncoverage accuracy");
    for (c, a) in &curve.points {
        println!("{c:>8.3} {a:>8.3}");
    }
    println!("acc@cov 50   {:.4}", acc_at_cov(&curve, 0.5)?);
    println!("cov@acc 90   {:.4}", cov_at_acc(&curve, 0.9)?);
    println!("sc_auc       {:.4}", sc_auc(&curve)?);
    println!("ece (5 bins) {:.4}", ece(&conf, &correct, 5)?);

    let examples: Vec<ScoredExample> = conf
        .iter()
        .zip(correct)
        .enumerate()
        .map(|(i, (&c, ok))| ScoredExample {
            score: -c,
            is_ood: i >= 4,
            correct: ok,
            confidence: Some(c),
        })
        .collect();
    let opts = EvalOptions::default();
    let report = report_from_examples(ScoreKind::Msp, &examples, &opts)?;
    print!("\n{}", report.to_csv(&opts));
    Ok(())
}
