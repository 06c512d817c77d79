use super::*;
use crate::datagen::{gen_covariate_shift, gen_standard_ood, BenchmarkKind, BenchmarkSpec};
use crate::losses::xent_loss;
use crate::metrics::{evaluate_model, EvalOptions, SelectivePopulation};
use crate::netcore::{init_model, Activation};
use crate::rng::rng_for;
use crate::scoring::{msp_confidence, ScoreKind};
use rand::Rng;
use rand_distr::StandardNormal;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two classes split by the hyperplane x0 = 0 with a margin of 1.
fn separable_toy(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = rng_for(seed, "toy");
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let z: f64 = rng.sample(StandardNormal);
        let side = if y == 0 { -1.0 } else { 1.0 };
        data.push(side * (1.0 + z.abs()));
        data.push(rng.sample(StandardNormal));
        labels.push(y);
    }
    LabeledDataset::in_distribution(Matrix::new(n, 2, data).unwrap(), labels, 2).unwrap()
}

fn accuracy(model: &MlpModel, data: &LabeledDataset) -> f64 {
    let pred = model.predict(data.features()).unwrap();
    let hits = pred
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / data.len() as f64
}

fn small_cfg() -> DcmConfig {
    DcmConfig {
        pretrain_epochs: 30,
        finetune_epochs: 5,
        ..Default::default()
    }
}

fn canonical_model(spec: &BenchmarkSpec, seed: u64) -> MlpModel {
    init_model(&[spec.dim, 64, 64, spec.n_classes], Activation::Relu, seed).unwrap()
}

#[test]
fn pretrain_fits_separable_toy() {
    let data = separable_toy(200, 3);
    let init = init_model(&[2, 16, 2], Activation::Relu, 3).unwrap();
    let run = pretrain(&init, &data, &small_cfg()).unwrap();
    assert!(accuracy(&run.model, &data) >= 0.99);
    assert_eq!(run.epoch_losses.len(), 30);
}

#[test]
fn pretrain_is_deterministic() {
    let data = separable_toy(100, 1);
    let init = init_model(&[2, 8, 2], Activation::Tanh, 1).unwrap();
    let a = pretrain(&init, &data, &small_cfg()).unwrap();
    let b = pretrain(&init, &data, &small_cfg()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn longer_pretraining_does_not_raise_the_loss() {
    let data = separable_toy(200, 5);
    let init = init_model(&[2, 16, 2], Activation::Relu, 5).unwrap();
    let loss = |epochs| {
        let cfg = DcmConfig {
            pretrain_epochs: epochs,
            ..small_cfg()
        };
        let m = pretrain(&init, &data, &cfg).unwrap().model;
        xent_loss(&m.predict_proba(data.features()).unwrap(), data.labels())
            .unwrap()
            .value()
    };
    assert!(loss(200) <= loss(20) + 1e-6);
}

#[test]
fn pretrain_rejects_empty_and_mislabeled_data() {
    let init = init_model(&[2, 4, 2], Activation::Relu, 0).unwrap();
    let empty = LabeledDataset::empty(2, 2);
    assert!(matches!(
        pretrain(&init, &empty, &small_cfg()),
        Err(DcmError::Config(_))
    ));
    let wide = init_model(&[3, 4, 2], Activation::Relu, 0).unwrap();
    assert!(pretrain(&wide, &separable_toy(10, 0), &small_cfg()).is_err());
}

#[test]
fn zero_lambda_is_continued_pretraining() {
    let data = separable_toy(70, 2);
    let init = init_model(&[2, 8, 2], Activation::Relu, 2).unwrap();
    let cfg = DcmConfig {
        lambda: 0.0,
        finetune_epochs: 3,
        ..small_cfg()
    };
    let unc = separable_toy(40, 9).features().clone();
    let tuned = finetune_ood(&init, &data, &unc, &cfg).unwrap().model;

    // reference: plain cross-entropy steps over the same ID stream
    let mut reference = init.clone();
    let mut stream = CyclingSampler::new(data.len(), rng_for(cfg.seed, "finetune/id"));
    for _ in 0..cfg.finetune_epochs * data.len().div_ceil(cfg.batch_id) {
        let batch = label_batch(&data, &stream.next_batch(cfg.batch_id)).unwrap();
        let (_, grads) = reference.backward(&batch).unwrap();
        reference.sgd_step(&grads, cfg.lr_finetune).unwrap();
    }
    assert_eq!(tuned, reference);
}

#[test]
fn finetune_ood_rejects_empty_unlabeled_set() {
    let data = separable_toy(20, 0);
    let init = init_model(&[2, 4, 2], Activation::Relu, 0).unwrap();
    let err = finetune_ood(&init, &data, &Matrix::empty(2), &small_cfg());
    assert!(matches!(err, Err(DcmError::Config(_))));
}

#[test]
fn confidence_drops_on_an_outlier_cluster() {
    let data = separable_toy(200, 4);
    let init = init_model(&[2, 16, 2], Activation::Relu, 4).unwrap();
    let pre = pretrain(&init, &data, &small_cfg()).unwrap().model;

    let mut rng = rng_for(4, "outliers");
    let cluster: Vec<f64> = (0..100)
        .flat_map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [8.0 + 0.5 * a, 8.0 + 0.5 * b]
        })
        .collect();
    let cluster = Matrix::new(100, 2, cluster).unwrap();
    let id_test = separable_toy(200, 40);

    let post = finetune_ood(&pre, &data, &cluster, &small_cfg())
        .unwrap()
        .model;
    let drop = |x: &Matrix| {
        mean(&msp_confidence(&pre, x).unwrap()) - mean(&msp_confidence(&post, x).unwrap())
    };
    let ood_drop = drop(&cluster);
    assert!(ood_drop > 0.0);
    assert!(drop(id_test.features()) < ood_drop);
}

#[test]
fn mixed_unlabeled_set_improves_auroc() {
    let spec = BenchmarkSpec::default();
    let s = gen_standard_ood(&spec).unwrap();
    let cfg = DcmConfig::default();
    let pre = pretrain(&canonical_model(&spec, 0), &s.train, &cfg)
        .unwrap()
        .model;
    let opts = EvalOptions::default();
    let auroc = |m: &MlpModel| {
        evaluate_model(m, &s.test, ScoreKind::Msp, &opts)
            .unwrap()
            .auroc
            .unwrap()
    };
    let tuned = finetune_ood(&pre, &s.train, s.uncertainty.features(), &cfg).unwrap();
    let trans = finetune_transductive(&pre, &s.train, s.test.features(), &cfg).unwrap();
    assert!(auroc(&tuned.model) > auroc(&pre));
    assert!(auroc(&trans.model) >= auroc(&pre));
}

#[test]
fn transductive_is_finetune_on_test_inputs() {
    let data = separable_toy(50, 6);
    let init = init_model(&[2, 8, 2], Activation::Relu, 6).unwrap();
    let x = separable_toy(30, 7).features().clone();
    let a = finetune_transductive(&init, &data, &x, &small_cfg()).unwrap();
    let b = finetune_ood(&init, &data, &x, &small_cfg()).unwrap();
    assert_eq!(a, b);
}

/// Linear model on 2-d inputs whose logits are (x0, x1).
fn identity_model() -> MlpModel {
    MlpModel::from_parts(
        vec![2, 2],
        vec![Matrix::identity(2)],
        vec![vec![0.0, 0.0]],
        Activation::Relu,
    )
    .unwrap()
}

fn labeled(rows: &[[f64; 2]], labels: &[usize]) -> LabeledDataset {
    let data = rows.iter().flatten().copied().collect();
    LabeledDataset::in_distribution(
        Matrix::new(rows.len(), 2, data).unwrap(),
        labels.to_vec(),
        2,
    )
    .unwrap()
}

#[test]
fn partition_of_a_perfect_model_has_no_errors() {
    let val = labeled(&[[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]], &[0, 1, 0]);
    let p = partition_val(&identity_model(), &val).unwrap();
    assert!(p.error.is_empty());
    assert_eq!(p.correct_idx, vec![0, 1, 2]);
}

#[test]
fn constant_predictor_errs_on_every_other_class() {
    let model = MlpModel::from_parts(
        vec![2, 2],
        vec![Matrix::zeros(2, 2)],
        vec![vec![0.0, 0.0]],
        Activation::Relu,
    )
    .unwrap();
    // all-zero logits tie, and ties go to class 0
    let val = labeled(
        &[[1.0, 0.0], [0.0, 1.0], [3.0, 3.0], [0.0, 2.0]],
        &[0, 1, 0, 1],
    );
    let p = partition_val(&model, &val).unwrap();
    assert_eq!(p.error_idx, vec![1, 3]);
    assert_eq!(p.correct_idx, vec![0, 2]);
}

#[test]
fn hand_built_partition_splits_two_and_two() {
    // predictions: 0, 1, 1, 0
    let val = labeled(
        &[[2.0, 1.0], [0.0, 1.0], [-1.0, 0.5], [0.3, 0.2]],
        &[0, 0, 1, 1],
    );
    let p = partition_val(&identity_model(), &val).unwrap();
    assert_eq!(p.correct_idx, vec![0, 2]);
    assert_eq!(p.error_idx, vec![1, 3]);
    assert_eq!(p.correct.len() + p.error.len(), val.len());
    assert_eq!(p.error.labels(), &[0, 1]);
}

#[test]
fn partition_rejects_empty_validation_set() {
    let err = partition_val(&identity_model(), &LabeledDataset::empty(2, 2));
    assert!(matches!(err, Err(DcmError::EmptyInput(_))));
}

#[test]
fn finetune_sc_skips_when_validation_is_perfect() {
    let train = labeled(&[[1.0, 0.0], [0.0, 1.0]], &[0, 1]);
    let val = labeled(&[[3.0, 0.0], [0.0, 3.0]], &[0, 1]);
    let run = finetune_sc(&identity_model(), &train, &val, &small_cfg()).unwrap();
    assert_eq!(run.model, identity_model());
    assert_eq!(run.warnings, vec![WARN_EMPTY_ERROR_SET.to_string()]);
    assert!(run.epoch_losses.is_empty());
}

#[test]
fn finetune_sc_at_zero_lambda_trains_on_train_and_correct() {
    let train = separable_toy(60, 8);
    let val = separable_toy(40, 9);
    let init = init_model(&[2, 6, 2], Activation::Relu, 8).unwrap();
    let pre = pretrain(
        &init,
        &train,
        &DcmConfig {
            pretrain_epochs: 1,
            ..small_cfg()
        },
    )
    .unwrap()
    .model;
    let parts = partition_val(&pre, &val).unwrap();
    assert!(
        !parts.error.is_empty(),
        "toy model should still make errors"
    );
    let cfg = DcmConfig {
        lambda: 0.0,
        ..small_cfg()
    };
    let sc = finetune_sc(&pre, &train, &val, &cfg).unwrap();
    let ft = train.concat(&parts.correct).unwrap();
    let plain = finetune_ood(&pre, &ft, separable_toy(5, 1).features(), &cfg).unwrap();
    assert_eq!(sc.model, plain.model);
}

#[test]
fn finetune_sc_helps_selective_accuracy_under_shift() {
    let spec = BenchmarkSpec::canonical(BenchmarkKind::CovariateShift);
    let s = gen_covariate_shift(&spec).unwrap();
    let cfg = DcmConfig::default();
    let pre = pretrain(&canonical_model(&spec, 0), &s.train, &cfg)
        .unwrap()
        .model;
    let sc = finetune_sc(&pre, &s.train, &s.val, &cfg).unwrap();
    assert!(sc.warnings.is_empty());
    let opts = EvalOptions {
        population: SelectivePopulation::All,
        ..Default::default()
    };
    let acc90 = |m: &MlpModel| {
        evaluate_model(m, &s.test_ood, ScoreKind::Msp, &opts)
            .unwrap()
            .acc_at(0.9)
            .unwrap()
    };
    assert!(acc90(&sc.model) >= acc90(&pre));
}

#[test]
fn training_manifest_echoes_the_run() {
    let data = separable_toy(20, 0);
    let init = init_model(&[2, 4, 2], Activation::Relu, 0).unwrap();
    let cfg = DcmConfig {
        pretrain_epochs: 2,
        ..small_cfg()
    };
    let run = pretrain(&init, &data, &cfg).unwrap();
    let m = TrainingManifest::new("pretrain", &cfg, &run, Some("model.dcm".into()));
    let back: TrainingManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.epoch_losses.len(), 2);
}
