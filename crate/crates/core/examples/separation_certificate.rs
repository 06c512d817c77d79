//! The optimum of the fine-tuning objective and the MSP separation it
//! implies. The uncertainty set's ID part is the training set itself, the
//! setting in which the separation argument applies.

use dcm::datagen::{gen_standard_ood, BenchmarkKind, BenchmarkSpec, Domain};
use dcm::dcm::{finetune_ood, pretrain, DcmConfig};
use dcm::netcore::{init_model, Activation};
use dcm::theory::{
    certify_separation, msp_uniform, optimal_distribution, optimal_msp_id, separation_epsilon,
    NeighborhoodSpec,
};

fn main() -> dcm::Result<()> {
    let lambda = 0.5;
    let c = 4;
    let p = [0.7, 0.2, 0.1, 0.0];
    println!("p          = {p:?}");
    println!("p_lambda   = {:.4?}", optimal_distribution(&p, lambda)?);
    println!(
        "one-hot ID optimum has MSP {:.4}; uniform has {:.4}",
        optimal_msp_id(lambda, c),
        msp_uniform(c)
    );

    let spec = BenchmarkSpec {
        uncertainty_id_from_train: true,
        ..BenchmarkSpec::canonical(BenchmarkKind::StandardOod)
    };
    let splits = gen_standard_ood(&spec)?;
    let cfg = DcmConfig {
        lambda,
        lr_finetune: 0.1,
        finetune_epochs: 100,
        ..DcmConfig::default()
    };
    let init = init_model(&[spec.dim, 64, 64, c], Activation::Relu, 0)?;
    let base = pretrain(&init, &splits.train, &cfg)?.model;
    let tuned = finetune_ood(&base, &splits.train, splits.uncertainty.features(), &cfg)?.model;

    let ood = splits.uncertainty.filter_domain(Domain::Ood);
    let nb = NeighborhoodSpec::default();
    for (name, model) in [("pre-trained", &base), ("fine-tuned", &tuned)] {
        let cert = certify_separation(model, &splits.train, ood.features(), lambda, Some(&nb))?;
        println!("\n{name}");
        println!(
            "  min ID MSP {:.4}, max OOD MSP {:.4}, separated {}",
            cert.min_id_msp, cert.max_ood_msp, cert.separated
        );
        println!(
            "  eps_hat {:.3e} vs threshold {:.3e} (N = {})",
            cert.epsilon_hat, cert.epsilon_threshold, cert.n_total
        );
        println!(
            "  bounds: ID MSP >= {:.4}, OOD MSP <= {:.4}, hold {}",
            cert.id_msp_lower_bound, cert.ood_msp_upper_bound, cert.bounds_hold
        );
        if let Some(n) = cert.neighborhood {
            println!("  within delta {}: separated {}", n.delta, n.separated);
        }
    }
    println!(
        "\nthreshold for N = 10 examples: {:.3e}",
        separation_epsilon(10, c, lambda)?
    );
    Ok(())
}
