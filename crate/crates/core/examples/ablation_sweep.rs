//! Sweep one knob with the experiment harness and print mean AUROC with
//! standard errors. Usage: `ablation_sweep [lambda|ood_fraction|unc_size]`.

use dcm::datagen::BenchmarkKind;
use dcm::harness::{aggregate, execute_experiment, ExperimentConfig, Mode, Sweep, SweepParameter};
use dcm::scoring::ScoreKind;

fn main() -> dcm::Result<()> {
    let which = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "ood_fraction".into());
    let (parameter, values) = match which.as_str() {
        "lambda" => (SweepParameter::Lambda, vec![0.1, 0.3, 0.5, 1.0, 2.0]),
        "unc_size" => (SweepParameter::UncSize, vec![25.0, 100.0, 400.0]),
        _ => (SweepParameter::OodFraction, vec![0.0, 0.25, 0.5, 0.75, 1.0]),
    };
    let mut cfg = ExperimentConfig::new(Mode::OodDetection, BenchmarkKind::NearOod);
    cfg.n_seeds = 3;
    cfg.score_kinds = vec![ScoreKind::Msp];
    cfg.sweep = Some(Sweep { parameter, values });

    let out = execute_experiment(&cfg)?;
    println!("{parameter:>12} {:>9} {:>16}", "variant", "auroc");
    for a in aggregate(&out.rows, &cfg.eval_options()) {
        let s = a
            .metrics
            .iter()
            .find(|m| m.0 == "auroc")
            .and_then(|m| m.1)
            .unwrap();
        println!(
            "{:>12} {:>9} {:>8.4} ± {:.4}",
            a.sweep_value.unwrap(),
            a.variant,
            s.mean,
            s.stderr.unwrap_or(0.0)
        );
    }
    println!("{:.1}s", out.manifest.wall_clock_secs);
    Ok(())
}
