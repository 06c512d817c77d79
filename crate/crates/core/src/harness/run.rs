use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, SweepParameter};
use super::io::write_atomic;
use crate::datagen::{
    gen_covariate_shift, gen_near_ood, gen_standard_ood, BenchmarkKind, Domain, LabeledDataset,
};
use crate::dcm::{finetune_ood, finetune_sc, finetune_transductive, pretrain, DcmConfig};
use crate::error::{DcmError, Result};
use crate::metrics::{
    evaluate_model, selective_curve, EvalOptions, EvalReport, SelectivePopulation,
};
use crate::netcore::{write_checkpoint, MlpModel};
use crate::rng::derive_seed;
use crate::theory::{certify_separation, NeighborhoodSpec, SeparationCertificate};

/// Leading columns of `results.csv`; the report columns follow.
pub const RESULT_KEY_COLUMNS: [&str; 5] =
    ["sweep_parameter", "sweep_value", "seed", "variant", "split"];

/// Metrics for one (sweep point, seed, variant, split, score) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_parameter: Option<SweepParameter>,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub variant: String,
    pub split: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub sweep_parameter: Option<SweepParameter>,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub variant: String,
    /// `lemma` for the training set against the OOD part of the uncertainty
    /// set, `test` for the ID and OOD parts of the test set.
    pub set: String,
    pub certificate: SeparationCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub sweep_value: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub n_runs: usize,
    pub n_failed: usize,
    /// Some runs failed; their results are missing.
    pub partial: bool,
    pub failures: Vec<RunFailure>,
    pub warnings: Vec<String>,
    /// Every per-seed report, in `results.csv` order.
    pub reports: Vec<ResultRow>,
    /// Means and standard errors across seeds.
    pub aggregates: Vec<AggregateRow>,
    pub certificates: Vec<CertificateRow>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub certificates: Vec<CertificateRow>,
    pub manifest: RunManifest,
    /// Selective curves keyed by file name, when requested.
    pub curves: Vec<(String, String)>,
    /// Trained models keyed by file name, when requested.
    pub checkpoints: Vec<(String, MlpModel)>,
}

impl ExperimentOutcome {
    /// Rows matching a variant, split and score kind, in seed order.
    pub fn select<'a>(
        &'a self,
        variant: &'a str,
        split: &'a str,
        kind: crate::scoring::ScoreKind,
    ) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| {
            r.variant == variant && r.split == split && r.report.score_kind == kind
        })
    }
}

/// Output of one (sweep point, seed) run.
#[derive(Default)]
struct UnitOutput {
    rows: Vec<ResultRow>,
    certificates: Vec<CertificateRow>,
    warnings: Vec<String>,
    curves: Vec<(String, String)>,
    checkpoints: Vec<(String, MlpModel)>,
}

struct Unit<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a EvalOptions,
    parameter: Option<SweepParameter>,
    value: Option<f64>,
    seed: u64,
}

impl Unit<'_> {
    fn tag(&self) -> String {
        match (self.parameter, self.value) {
            (Some(p), Some(v)) => format!("seed{}_{}{}", self.seed, p, v),
            _ => format!("seed{}", self.seed),
        }
    }

    fn evaluate(
        &self,
        out: &mut UnitOutput,
        model: &MlpModel,
        variant: &str,
        split: &str,
        data: &LabeledDataset,
    ) -> Result<()> {
        for &kind in &self.cfg.score_kinds {
            out.rows.push(ResultRow {
                sweep_parameter: self.parameter,
                sweep_value: self.value,
                seed: self.seed,
                variant: variant.to_string(),
                split: split.to_string(),
                report: evaluate_model(model, data, kind, self.opts)?,
            });
        }
        if self.cfg.write_curves {
            let population = match self.opts.population {
                SelectivePopulation::All => data.clone(),
                SelectivePopulation::IdOnly => data.filter_domain(Domain::Id),
            };
            if !population.is_empty() {
                let probs = model.predict_proba(population.features())?;
                let (conf, correct): (Vec<f64>, Vec<bool>) = probs
                    .row_iter()
                    .zip(population.labels())
                    .map(|(p, &y)| {
                        let k = crate::netcore::argmax(p);
                        (p[k], k == y)
                    })
                    .unzip();
                let curve = selective_curve(&conf, &correct)?;
                out.curves.push((
                    format!("curves/{}_{variant}_{split}.csv", self.tag()),
                    curve.to_csv(),
                ));
            }
        }
        Ok(())
    }

    fn certify(
        &self,
        out: &mut UnitOutput,
        model: &MlpModel,
        variant: &str,
        set: &str,
        id: &LabeledDataset,
        ood: &LabeledDataset,
    ) -> Result<()> {
        let nb = NeighborhoodSpec {
            delta: self.cfg.theory.delta,
            directions: self.cfg.theory.directions,
            seed: derive_seed(self.seed, "theory"),
        };
        let certificate =
            certify_separation(model, id, ood.features(), self.cfg.dcm.lambda, Some(&nb))?;
        out.certificates.push(CertificateRow {
            sweep_parameter: self.parameter,
            sweep_value: self.value,
            seed: self.seed,
            variant: variant.to_string(),
            set: set.to_string(),
            certificate,
        });
        Ok(())
    }

    fn keep(&self, out: &mut UnitOutput, variant: &str, model: &MlpModel) {
        if self.cfg.save_checkpoints {
            out.checkpoints.push((
                format!("checkpoints/{}_{variant}.ckpt", self.tag()),
                model.clone(),
            ));
        }
    }

    fn warn(&self, out: &mut UnitOutput, stage: &str, warnings: &[String]) {
        out.warnings.extend(
            warnings
                .iter()
                .map(|w| format!("{} {stage}: {w}", self.tag())),
        );
    }
}

/// Pre-trained models of one seed, reused while the training set is unchanged.
type PretrainCache = Vec<(LabeledDataset, MlpModel)>;

fn pretrained(
    unit: &Unit<'_>,
    cache: &mut PretrainCache,
    train: &LabeledDataset,
    dcm: &DcmConfig,
) -> Result<MlpModel> {
    if let Some((_, m)) = cache.iter().find(|(t, _)| t == train) {
        return Ok(m.clone());
    }
    let init = unit.cfg.model.init(
        train.dim(),
        train.n_classes(),
        derive_seed(dcm.seed, "init"),
    )?;
    let run = pretrain(&init, train, dcm)?;
    cache.push((train.clone(), run.model.clone()));
    Ok(run.model)
}

fn run_unit(unit: &Unit<'_>, cache: &mut PretrainCache) -> Result<UnitOutput> {
    let cfg = unit.cfg;
    let mut spec = cfg.benchmark.clone();
    spec.seed = derive_seed(unit.seed, "data");
    let mut dcm = cfg.dcm.clone();
    dcm.seed = derive_seed(unit.seed, "train");
    let mut out = UnitOutput::default();

    if spec.kind == BenchmarkKind::CovariateShift {
        let splits = gen_covariate_shift(&spec)?;
        let base = pretrained(unit, cache, &splits.train, &dcm)?;
        unit.keep(&mut out, "pretrained", &base);
        let run = finetune_sc(&base, &splits.train, &splits.val, &dcm)?;
        unit.warn(&mut out, "finetune_sc", &run.warnings);
        unit.keep(&mut out, "dcm", &run.model);
        for (variant, model) in [("baseline", &base), ("dcm", &run.model)] {
            unit.evaluate(&mut out, model, variant, "id", &splits.test_id)?;
            unit.evaluate(&mut out, model, variant, "ood", &splits.test_ood)?;
            unit.evaluate(&mut out, model, variant, "mixed", &splits.test_mixed)?;
        }
        return Ok(out);
    }

    let splits = match spec.kind {
        BenchmarkKind::NearOod => gen_near_ood(&spec)?,
        _ => gen_standard_ood(&spec)?,
    };
    let base = pretrained(unit, cache, &splits.train, &dcm)?;
    unit.keep(&mut out, "pretrained", &base);
    let run = finetune_ood(&base, &splits.train, splits.uncertainty.features(), &dcm)?;
    unit.warn(&mut out, "finetune_ood", &run.warnings);
    unit.keep(&mut out, "dcm", &run.model);
    unit.evaluate(&mut out, &base, "baseline", "test", &splits.test)?;
    unit.evaluate(&mut out, &run.model, "dcm", "test", &splits.test)?;

    match cfg.mode {
        Mode::Transductive => {
            let tr = finetune_transductive(&base, &splits.train, splits.test.features(), &dcm)?;
            unit.warn(&mut out, "finetune_transductive", &tr.warnings);
            unit.keep(&mut out, "transductive", &tr.model);
            unit.evaluate(&mut out, &tr.model, "transductive", "test", &splits.test)?;
        }
        Mode::TheoryCheck => {
            let unc_ood = splits.uncertainty.filter_domain(Domain::Ood);
            let test_id = splits.test.filter_domain(Domain::Id);
            let test_ood = splits.test.filter_domain(Domain::Ood);
            for (variant, model) in [("baseline", &base), ("dcm", &run.model)] {
                if !unc_ood.is_empty() {
                    unit.certify(&mut out, model, variant, "lemma", &splits.train, &unc_ood)?;
                }
                if !test_id.is_empty() && !test_ood.is_empty() {
                    unit.certify(&mut out, model, variant, "test", &test_id, &test_ood)?;
                }
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Runs every (sweep value, seed) combination without touching the disk.
/// A failing combination is recorded in the manifest and the rest carry on.
pub fn execute_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let started_unix_secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let opts = cfg.eval_options();
    let points: Vec<(Option<SweepParameter>, Option<f64>, ExperimentConfig)> = match &cfg.sweep {
        Some(s) => s
            .values
            .iter()
            .map(|&v| {
                Ok((
                    Some(s.parameter),
                    Some(v),
                    cfg.with_sweep_value(s.parameter, v)?,
                ))
            })
            .collect::<Result<_>>()?,
        None => vec![(None, None, cfg.clone())],
    };
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();

    // per seed, one result per sweep point
    let per_seed: Vec<Vec<std::result::Result<UnitOutput, RunFailure>>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cache = PretrainCache::new();
            points
                .iter()
                .map(|(parameter, value, point_cfg)| {
                    let unit = Unit {
                        cfg: point_cfg,
                        opts: &opts,
                        parameter: *parameter,
                        value: *value,
                        seed,
                    };
                    run_unit(&unit, &mut cache).map_err(|e| RunFailure {
                        seed,
                        sweep_value: *value,
                        message: e.to_string(),
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut certificates = Vec::new();
    let mut warnings = Vec::new();
    let mut failures = Vec::new();
    let mut curves = Vec::new();
    let mut checkpoints = Vec::new();
    for p in 0..points.len() {
        for seed_results in &per_seed {
            match &seed_results[p] {
                Ok(u) => {
                    rows.extend(u.rows.iter().cloned());
                    certificates.extend(u.certificates.iter().cloned());
                    warnings.extend(u.warnings.iter().cloned());
                    curves.extend(u.curves.iter().cloned());
                    checkpoints.extend(u.checkpoints.iter().cloned());
                }
                Err(f) => failures.push(f.clone()),
            }
        }
    }

    let n_runs = points.len() * seeds.len();
    let aggregates = aggregate(&rows, &opts);
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seeds,
        n_runs,
        n_failed: failures.len(),
        partial: !failures.is_empty(),
        failures,
        warnings,
        reports: rows.clone(),
        aggregates,
        certificates: certificates.clone(),
        files: Vec::new(),
        started_unix_secs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutcome {
        rows,
        certificates,
        manifest,
        curves,
        checkpoints,
    })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn fmt_parameter(p: Option<SweepParameter>) -> String {
    p.map_or_else(String::new, |p| p.to_string())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| DcmError::format("csv output", e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| DcmError::format("csv output", e.to_string()))
}

/// `results.csv`: one line per row, key columns then report columns.
pub fn results_csv(rows: &[ResultRow], opts: &EvalOptions) -> Result<Vec<u8>> {
    let mut header: Vec<String> = RESULT_KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(EvalReport::csv_header(opts));
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            let mut line = vec![
                fmt_parameter(r.sweep_parameter),
                fmt_value(r.sweep_value),
                r.seed.to_string(),
                r.variant.clone(),
                r.split.clone(),
            ];
            line.extend(r.report.csv_values(opts));
            line
        }),
    )
}

/// Mean and standard error of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; absent for a single value.
    pub stderr: Option<f64>,
    pub n: usize,
}

pub fn mean_stderr(values: &[f64]) -> Option<MeanStderr> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some((var / n as f64).sqrt())
    } else {
        None
    };
    Some(MeanStderr { mean, stderr, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_parameter: Option<SweepParameter>,
    pub sweep_value: Option<f64>,
    pub variant: String,
    pub split: String,
    pub score_kind: crate::scoring::ScoreKind,
    /// Metric name to its summary, in `results.csv` column order.
    pub metrics: Vec<(String, Option<MeanStderr>)>,
}

fn numeric_metrics(report: &EvalReport, opts: &EvalOptions) -> Vec<(String, Option<f64>)> {
    EvalReport::csv_header(opts)
        .into_iter()
        .zip(report.csv_values(opts))
        .filter(|(name, _)| name != "score_kind")
        .map(|(name, v)| (name, v.parse::<f64>().ok()))
        .collect()
}

/// Groups rows by everything except the seed.
pub fn aggregate(rows: &[ResultRow], opts: &EvalOptions) -> Vec<AggregateRow> {
    // BTreeMap keyed by first appearance keeps the output order stable
    let mut order: Vec<AggregateRow> = Vec::new();
    let mut values: BTreeMap<usize, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for r in rows {
        let idx = order.iter().position(|a| {
            a.sweep_parameter == r.sweep_parameter
                && a.sweep_value.map(f64::to_bits) == r.sweep_value.map(f64::to_bits)
                && a.variant == r.variant
                && a.split == r.split
                && a.score_kind == r.report.score_kind
        });
        let metrics = numeric_metrics(&r.report, opts);
        let idx = idx.unwrap_or_else(|| {
            order.push(AggregateRow {
                sweep_parameter: r.sweep_parameter,
                sweep_value: r.sweep_value,
                variant: r.variant.clone(),
                split: r.split.clone(),
                score_kind: r.report.score_kind,
                metrics: metrics.iter().map(|(n, _)| (n.clone(), None)).collect(),
            });
            order.len() - 1
        });
        values
            .entry(idx)
            .or_default()
            .push(metrics.into_iter().map(|(_, v)| v).collect());
    }
    for (idx, per_seed) in values {
        for (m, slot) in order[idx].metrics.iter_mut().enumerate() {
            let col: Vec<f64> = per_seed.iter().filter_map(|row| row[m]).collect();
            slot.1 = mean_stderr(&col);
        }
    }
    order
}

pub fn aggregates_csv(aggs: &[AggregateRow]) -> Result<Vec<u8>> {
    let Some(first) = aggs.first() else {
        return csv_bytes(&[], std::iter::empty());
    };
    let mut header: Vec<String> = [
        "sweep_parameter",
        "sweep_value",
        "variant",
        "split",
        "score_kind",
        "n",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (name, _) in &first.metrics {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_stderr"));
    }
    csv_bytes(
        &header,
        aggs.iter().map(|a| {
            let n = a
                .metrics
                .iter()
                .filter_map(|m| m.1)
                .map(|s| s.n)
                .max()
                .unwrap_or(0);
            let mut line = vec![
                fmt_parameter(a.sweep_parameter),
                fmt_value(a.sweep_value),
                a.variant.clone(),
                a.split.clone(),
                a.score_kind.to_string(),
                n.to_string(),
            ];
            for (_, s) in &a.metrics {
                let finite = |v: f64| {
                    if v.is_finite() {
                        format!("{v}")
                    } else {
                        String::new()
                    }
                };
                line.push(s.map_or_else(String::new, |s| finite(s.mean)));
                line.push(s.and_then(|s| s.stderr).map_or_else(String::new, finite));
            }
            line
        }),
    )
}

pub const CERTIFICATE_COLUMNS: [&str; 21] = [
    "sweep_parameter",
    "sweep_value",
    "seed",
    "variant",
    "set",
    "lambda",
    "n_id",
    "n_ood",
    "epsilon_threshold",
    "epsilon_hat",
    "objective_gap",
    "id_msp_lower_bound",
    "ood_msp_upper_bound",
    "min_id_msp",
    "max_ood_msp",
    "achieved_gap",
    "separated",
    "bounds_hold",
    "within_threshold",
    "consistent",
    "neighborhood_separated",
];

pub fn certificates_csv(rows: &[CertificateRow]) -> Result<Vec<u8>> {
    let header: Vec<String> = CERTIFICATE_COLUMNS.iter().map(|s| s.to_string()).collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            let c = &r.certificate;
            vec![
                fmt_parameter(r.sweep_parameter),
                fmt_value(r.sweep_value),
                r.seed.to_string(),
                r.variant.clone(),
                r.set.clone(),
                c.lambda.to_string(),
                c.n_id.to_string(),
                c.n_ood.to_string(),
                c.epsilon_threshold.to_string(),
                c.epsilon_hat.to_string(),
                c.objective_gap.to_string(),
                c.id_msp_lower_bound.to_string(),
                c.ood_msp_upper_bound.to_string(),
                c.min_id_msp.to_string(),
                c.max_ood_msp.to_string(),
                c.achieved_gap.to_string(),
                c.separated.to_string(),
                c.bounds_hold.to_string(),
                c.within_threshold().to_string(),
                c.consistent().to_string(),
                c.neighborhood
                    .map_or_else(String::new, |n| n.separated.to_string()),
            ]
        }),
    )
}

/// Writes every output of `outcome` under `dir` and fills in
/// `manifest.files`. The manifest is written last.
pub fn write_outputs(outcome: &mut ExperimentOutcome, dir: &Path) -> Result<()> {
    let cfg = &outcome.manifest.config;
    let opts = cfg.eval_options();
    let mut files: Vec<(PathBuf, Vec<u8>)> =
        vec![("results.csv".into(), results_csv(&outcome.rows, &opts)?)];
    if cfg.n_seeds > 1 {
        files.push((
            "aggregates.csv".into(),
            aggregates_csv(&outcome.manifest.aggregates)?,
        ));
    }
    if cfg.mode == Mode::TheoryCheck {
        files.push((
            "certificates.csv".into(),
            certificates_csv(&outcome.certificates)?,
        ));
    }
    for (name, text) in &outcome.curves {
        files.push((name.into(), text.clone().into_bytes()));
    }
    for (name, model) in &outcome.checkpoints {
        let mut buf = Vec::new();
        write_checkpoint(model, &mut buf)?;
        files.push((name.into(), buf));
    }
    outcome.manifest.files.clear();
    for (name, bytes) in &files {
        write_atomic(&dir.join(name), bytes)?;
        outcome
            .manifest
            .files
            .push(name.to_string_lossy().into_owned());
    }
    outcome.manifest.files.push("manifest.json".into());
    let json = serde_json::to_vec_pretty(&outcome.manifest)
        .map_err(|e| DcmError::format("manifest", e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), &json)
}

/// Runs the experiment and writes its outputs to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut outcome = execute_experiment(cfg)?;
    write_outputs(&mut outcome, &cfg.output_dir)?;
    Ok(outcome)
}
