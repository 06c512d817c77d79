mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;

use dcm::datagen::{gen_standard_ood, BenchmarkKind};
use dcm::harness::cli::{run as run_cli, Cli};
use dcm::harness::{
    execute_experiment, parse_config, run_experiment, ExperimentConfig, Mode, RunManifest, Sweep,
    SweepParameter,
};
use dcm::metrics::evaluate_model;
use dcm::netcore::load_checkpoint;
use dcm::rng::derive_seed;
use dcm::scoring::ScoreKind;

fn small(mode: Mode, kind: BenchmarkKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(mode, kind);
    cfg.benchmark.n_train = 200;
    cfg.benchmark.n_val = 200;
    cfg.benchmark.n_uncertainty = 200;
    cfg.benchmark.n_test = 200;
    cfg.dcm.pretrain_epochs = 30;
    cfg.dcm.finetune_epochs = 5;
    cfg.model.hidden = vec![16];
    cfg.n_seeds = 2;
    cfg
}

fn read_csv(path: &std::path::Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            header
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

#[test]
fn shipped_configs_parse() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn identical_configs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::Transductive, BenchmarkKind::StandardOod);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        cfg.output_dir = dir.path().join(run);
        run_experiment(&cfg).unwrap();
        bytes.push(std::fs::read(cfg.output_dir.join("results.csv")).unwrap());
        bytes.push(std::fs::read(cfg.output_dir.join("aggregates.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[2]);
    assert_eq!(bytes[1], bytes[3]);

    cfg.seed = 7;
    let other = execute_experiment(&cfg).unwrap();
    let first = String::from_utf8(bytes[0].clone()).unwrap();
    assert!(!first.contains(",7,"));
    assert!(other.rows.iter().all(|r| r.seed == 7 || r.seed == 8));
}

#[test]
fn one_report_per_seed_kind_and_variant() {
    let cfg = small(Mode::OodDetection, BenchmarkKind::StandardOod);
    let out = execute_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2 * 3 * 2);
    for seed in [0, 1] {
        for kind in ScoreKind::ALL {
            for variant in ["baseline", "dcm"] {
                let n = out
                    .rows
                    .iter()
                    .filter(|r| {
                        r.seed == seed && r.report.score_kind == kind && r.variant == variant
                    })
                    .count();
                assert_eq!(n, 1, "seed {seed} {kind} {variant}");
            }
        }
    }
    assert!(out.rows.iter().all(|r| r.report.auroc.is_some()));
}

#[test]
fn baseline_report_matches_the_saved_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::OodDetection, BenchmarkKind::StandardOod);
    cfg.n_seeds = 1;
    cfg.seed = 3;
    cfg.save_checkpoints = true;
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_experiment(&cfg).unwrap();

    let model = load_checkpoint(dir.path().join("checkpoints/seed3_pretrained.ckpt")).unwrap();
    let mut spec = cfg.benchmark.clone();
    spec.seed = derive_seed(3, "data");
    let splits = gen_standard_ood(&spec).unwrap();
    for kind in ScoreKind::ALL {
        let direct = evaluate_model(&model, &splits.test, kind, &cfg.eval_options()).unwrap();
        let row = out.select("baseline", "test", kind).next().unwrap();
        assert_eq!(row.report, direct, "{kind}");
    }
    // the fine-tuned checkpoint is a different model
    let tuned = load_checkpoint(dir.path().join("checkpoints/seed3_dcm.ckpt")).unwrap();
    assert_ne!(tuned, model);
}

#[test]
fn aggregates_match_recomputation_from_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::OodDetection, BenchmarkKind::NearOod);
    cfg.n_seeds = 3;
    cfg.score_kinds = vec![ScoreKind::Msp];
    cfg.output_dir = dir.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    let rows = read_csv(&dir.path().join("results.csv"));
    let aggs = read_csv(&dir.path().join("aggregates.csv"));
    assert_eq!(aggs.len(), 2);
    for agg in &aggs {
        let group: Vec<&BTreeMap<String, String>> = rows
            .iter()
            .filter(|r| r["variant"] == agg["variant"] && r["score_kind"] == agg["score_kind"])
            .collect();
        assert_eq!(group.len(), 3);
        assert_eq!(agg["n"], "3");
        for metric in ["auroc", "fpr_at_95", "ece", "acc_at_cov_90"] {
            let v: Vec<f64> = group.iter().map(|r| r[metric].parse().unwrap()).collect();
            let mean: f64 = agg[&format!("{metric}_mean")].parse().unwrap();
            let se: f64 = agg[&format!("{metric}_stderr")].parse().unwrap();
            assert!((mean - common::mean(&v)).abs() < 1e-12, "{metric}");
            assert!((se - common::stderr(&v)).abs() < 1e-12, "{metric}");
        }
    }
}

#[test]
fn lambda_sweep_keeps_the_data_and_baseline_fixed() {
    let mut cfg = small(Mode::OodDetection, BenchmarkKind::StandardOod);
    cfg.score_kinds = vec![ScoreKind::Msp];
    let values = vec![0.1, 0.3, 0.5, 1.0, 2.0];
    cfg.sweep = Some(Sweep {
        parameter: SweepParameter::Lambda,
        values: values.clone(),
    });
    let out = execute_experiment(&cfg).unwrap();
    let aggs = dcm::harness::aggregate(&out.rows, &cfg.eval_options());
    let dcm_aggs: Vec<_> = aggs.iter().filter(|a| a.variant == "dcm").collect();
    assert_eq!(dcm_aggs.len(), 5);
    for seed in [0, 1] {
        let base: Vec<_> = out
            .rows
            .iter()
            .filter(|r| r.seed == seed && r.variant == "baseline")
            .map(|r| r.report.clone())
            .collect();
        assert_eq!(base.len(), 5);
        assert!(base.windows(2).all(|w| w[0] == w[1]));
        let tuned: Vec<_> = out
            .rows
            .iter()
            .filter(|r| r.seed == seed && r.variant == "dcm")
            .map(|r| r.report.auroc)
            .collect();
        assert!(tuned.windows(2).any(|w| w[0] != w[1]));
    }
}

#[test]
fn selective_mode_reports_each_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::SelectiveClassification, BenchmarkKind::CovariateShift);
    cfg.n_seeds = 1;
    cfg.score_kinds = vec![ScoreKind::Msp];
    cfg.write_curves = true;
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_experiment(&cfg).unwrap();
    for variant in ["baseline", "dcm"] {
        for split in ["id", "ood", "mixed"] {
            let r = out.select(variant, split, ScoreKind::Msp).next().unwrap();
            assert!(r.report.sc_auc.is_some() && r.report.acc_at(0.9).is_some());
            let curve = dir
                .path()
                .join(format!("curves/seed0_{variant}_{split}.csv"));
            assert!(curve.exists(), "{}", curve.display());
        }
    }
    // every test example carries a valid label under shift
    let mixed = out
        .select("baseline", "mixed", ScoreKind::Msp)
        .next()
        .unwrap();
    assert!(mixed.report.auroc.is_some());
}

#[test]
fn failures_are_recorded_and_mark_the_manifest_partial() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::OodDetection, BenchmarkKind::StandardOod);
    cfg.n_seeds = 1;
    cfg.score_kinds = vec![ScoreKind::Msp];
    cfg.sweep = Some(Sweep {
        parameter: SweepParameter::Lambda,
        values: vec![0.5, 1e300],
    });
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_experiment(&cfg).unwrap();
    let m: RunManifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(m.partial);
    assert_eq!((m.n_runs, m.n_failed), (2, 1));
    assert_eq!(m.failures[0].sweep_value, Some(1e300));
    assert!(out.rows.iter().all(|r| r.sweep_value == Some(0.5)));
    assert_eq!(out.rows.len(), 2);
    assert!(m.wall_clock_secs > 0.0);
    assert_eq!(m.config, cfg);
}

#[test]
fn near_ood_is_harder_than_far_ood_for_the_baseline() {
    let baseline_auroc = |kind: BenchmarkKind| {
        let mut cfg = ExperimentConfig::new(Mode::OodDetection, kind);
        cfg.n_seeds = 5;
        cfg.score_kinds = vec![ScoreKind::Msp];
        cfg.dcm.finetune_epochs = 1;
        let out = execute_experiment(&cfg).unwrap();
        let v: Vec<f64> = out
            .select("baseline", "test", ScoreKind::Msp)
            .map(|r| r.report.auroc.unwrap())
            .collect();
        common::mean(&v)
    };
    let near = baseline_auroc(BenchmarkKind::NearOod);
    let far = baseline_auroc(BenchmarkKind::StandardOod);
    assert!(near < far, "near {near} vs far {far}");
}

fn cli(args: &[&str]) -> (i32, String) {
    let cli = Cli::try_parse_from(std::iter::once("dcm").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    let code = run_cli(cli, &mut out).unwrap();
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn cli_pipeline_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let mut spec = dcm::datagen::BenchmarkSpec::canonical(BenchmarkKind::StandardOod);
    spec.n_train = 200;
    let splits = gen_standard_ood(&spec).unwrap();
    splits.train.write_csv(p("train.csv")).unwrap();
    splits.uncertainty.write_csv(p("unc.csv")).unwrap();
    splits.test.write_csv(p("test.csv")).unwrap();

    let (code, _) = cli(&[
        "pretrain",
        "--train",
        &p("train.csv"),
        "--out",
        &p("base.ckpt"),
    ]);
    assert_eq!(code, 0);
    assert!(dir.path().join("base.ckpt.json").exists());
    let (code, _) = cli(&[
        "finetune-ood",
        "--model",
        &p("base.ckpt"),
        "--train",
        &p("train.csv"),
        "--unlabeled",
        &p("unc.csv"),
        "--lambda",
        "0.5",
        "--out",
        &p("dcm.ckpt"),
    ]);
    assert_eq!(code, 0);
    for (model, scores) in [("base.ckpt", "base.csv"), ("dcm.ckpt", "dcm.csv")] {
        let (code, _) = cli(&[
            "score",
            "--model",
            &p(model),
            "--data",
            &p("test.csv"),
            "--kind",
            "msp",
            "--out",
            &p(scores),
        ]);
        assert_eq!(code, 0);
    }
    let auroc = |scores: &str| -> f64 {
        let (code, text) = cli(&["evaluate", "--scores", &p(scores)]);
        assert_eq!(code, 0);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let values: Vec<&str> = lines.next().unwrap().split(',').collect();
        values[header.iter().position(|h| *h == "auroc").unwrap()]
            .parse()
            .unwrap()
    };
    assert!(auroc("dcm.csv") > auroc("base.csv"));
}

#[test]
fn theory_check_prints_a_table_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("theory.toml");
    std::fs::write(
        &cfg_path,
        "mode = \"theory_check\"\n\
         [benchmark]\nkind = \"standard_ood\"\nuncertainty_id_from_train = true\nn_train = 200\nn_uncertainty = 200\nn_test = 200\n\
         [dcm]\npretrain_epochs = 30\nfinetune_epochs = 10\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let (code, text) = cli(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "theory-check",
    ]);
    assert_eq!(code, 0, "{text}");
    assert!(text.lines().next().unwrap().contains("eps_hat"));
    assert_eq!(text.lines().count(), 5);
    assert!(out_dir.join("certificates.csv").exists());
}
