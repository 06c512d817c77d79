use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{BenchmarkKind, BenchmarkSpec};
use crate::dcm::DcmConfig;
use crate::error::{DcmError, Result};
use crate::metrics::{EvalOptions, SelectivePopulation};
use crate::netcore::{init_model, Activation, MlpModel};
use crate::scoring::ScoreKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OodDetection,
    SelectiveClassification,
    Transductive,
    TheoryCheck,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OodDetection => "ood_detection",
            Mode::SelectiveClassification => "selective_classification",
            Mode::Transductive => "transductive",
            Mode::TheoryCheck => "theory_check",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// The knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Lambda,
    /// ID fraction of the uncertainty set.
    AlphaU,
    /// OOD fraction of the uncertainty set, `1 - alpha_u`.
    OodFraction,
    /// Size of the uncertainty set.
    UncSize,
    Severity,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::Lambda => "lambda",
            SweepParameter::AlphaU => "alpha_u",
            SweepParameter::OodFraction => "ood_fraction",
            SweepParameter::UncSize => "unc_size",
            SweepParameter::Severity => "severity",
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Widths of the hidden layers.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend(&self.hidden);
        dims.push(n_classes);
        dims
    }

    pub fn init(&self, input_dim: usize, n_classes: usize, seed: u64) -> Result<MlpModel> {
        init_model(
            &self.layer_dims(input_dim, n_classes),
            self.activation,
            seed,
        )
    }
}

/// Metric settings shared by every mode. Which examples enter the selective
/// metrics follows from the mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_bins: usize,
    pub coverages: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let d = EvalOptions::default();
        EvalConfig {
            n_bins: d.n_bins,
            coverages: d.coverages,
            accuracies: d.accuracies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    /// Radius of the neighborhood probed around every example.
    pub delta: f64,
    pub directions: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            delta: 0.1,
            directions: 8,
        }
    }
}

/// Everything `run_experiment` needs.
///
/// Benchmark keys that a config leaves unset take the canonical value for
/// the chosen kind (see [`BenchmarkSpec::canonical`]); the benchmark seed is
/// ignored because every run derives its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub benchmark: BenchmarkSpec,
    #[serde(default)]
    pub dcm: DcmConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "all_score_kinds")]
    pub score_kinds: Vec<ScoreKind>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    /// Seed of the first run; run `i` uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
    /// Also write selective curves under `curves/`.
    #[serde(default)]
    pub write_curves: bool,
    /// Also write pretrained and fine-tuned checkpoints under `checkpoints/`.
    #[serde(default)]
    pub save_checkpoints: bool,
}

fn all_score_kinds() -> Vec<ScoreKind> {
    ScoreKind::ALL.to_vec()
}

fn default_n_seeds() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl ExperimentConfig {
    /// Config with every optional key at its default.
    pub fn new(mode: Mode, kind: BenchmarkKind) -> Self {
        ExperimentConfig {
            mode,
            benchmark: BenchmarkSpec::canonical(kind),
            dcm: DcmConfig::default(),
            model: ModelConfig::default(),
            score_kinds: all_score_kinds(),
            sweep: None,
            n_seeds: default_n_seeds(),
            seed: 0,
            output_dir: default_output_dir(),
            eval: EvalConfig::default(),
            theory: TheoryConfig::default(),
            write_curves: false,
            save_checkpoints: false,
        }
    }

    /// Theory check on the standard benchmark with the uncertainty set's ID
    /// portion taken from the training set. Fine-tuning runs longer and
    /// hotter than the defaults so the objective gets close to its optimum.
    pub fn premise_theory_check() -> Self {
        let mut cfg = ExperimentConfig::new(Mode::TheoryCheck, BenchmarkKind::StandardOod);
        cfg.benchmark.uncertainty_id_from_train = true;
        cfg.dcm.lr_finetune = 0.1;
        cfg.dcm.finetune_epochs = 100;
        cfg.score_kinds = vec![ScoreKind::Msp];
        cfg
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            n_bins: self.eval.n_bins,
            coverages: self.eval.coverages.clone(),
            accuracies: self.eval.accuracies.clone(),
            population: match self.mode {
                Mode::SelectiveClassification => SelectivePopulation::All,
                _ => SelectivePopulation::IdOnly,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DcmError::config(m));
        self.benchmark.validate()?;
        self.dcm.validate()?;
        let detection = matches!(
            self.benchmark.kind,
            BenchmarkKind::StandardOod | BenchmarkKind::NearOod
        );
        match self.mode {
            Mode::SelectiveClassification if detection => {
                return err(
                    "selective_classification needs benchmark.kind = covariate_shift".into(),
                )
            }
            Mode::OodDetection | Mode::Transductive | Mode::TheoryCheck if !detection => {
                return err(format!(
                    "{} needs benchmark.kind = standard_ood or near_ood",
                    self.mode
                ))
            }
            _ => {}
        }
        if self.mode == Mode::TheoryCheck && self.dcm.lambda <= 0.0 {
            return err("theory_check needs lambda > 0".into());
        }
        if self.n_seeds == 0 {
            return err("n_seeds must be >= 1".into());
        }
        if self.score_kinds.is_empty() {
            return err("score_kinds must not be empty".into());
        }
        if self.model.hidden.contains(&0) {
            return err("hidden layer widths must be positive".into());
        }
        if self.eval.n_bins == 0 {
            return err("eval.n_bins must be positive".into());
        }
        for &v in self.eval.coverages.iter().chain(&self.eval.accuracies) {
            if !(v > 0.0 && v <= 1.0) {
                return err(format!(
                    "coverage and accuracy targets must lie in (0, 1], got {v}"
                ));
            }
        }
        if !(self.theory.delta >= 0.0 && self.theory.delta.is_finite())
            || self.theory.directions == 0
        {
            return err("theory.delta must be >= 0 and theory.directions positive".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return err("sweep.values must not be empty".into());
            }
            for &v in &sweep.values {
                // applying the value runs every check of the swept structs
                self.with_sweep_value(sweep.parameter, v)?;
            }
        }
        Ok(())
    }

    /// Copy of the config with one sweep value applied.
    pub fn with_sweep_value(&self, parameter: SweepParameter, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let detection_only = |what: &str| -> Result<()> {
            if self.benchmark.kind == BenchmarkKind::CovariateShift {
                Err(DcmError::config(format!(
                    "sweeping {what} needs a detection benchmark"
                )))
            } else {
                Ok(())
            }
        };
        let fraction = |v: f64| -> Result<f64> {
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(DcmError::config(format!(
                    "sweep value {v} for {parameter} must lie in [0, 1]"
                )))
            }
        };
        match parameter {
            SweepParameter::Lambda => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(DcmError::config(format!(
                        "lambda must be >= 0, got {value}"
                    )));
                }
                cfg.dcm.lambda = value;
            }
            SweepParameter::AlphaU => {
                detection_only("alpha_u")?;
                cfg.benchmark.alpha_u = fraction(value)?;
            }
            SweepParameter::OodFraction => {
                detection_only("ood_fraction")?;
                cfg.benchmark.alpha_u = 1.0 - fraction(value)?;
            }
            SweepParameter::UncSize => {
                detection_only("unc_size")?;
                if !(value >= 1.0 && value.fract() == 0.0 && value.is_finite()) {
                    return Err(DcmError::config(format!(
                        "unc_size must be a positive integer, got {value}"
                    )));
                }
                cfg.benchmark.n_uncertainty = value as usize;
            }
            SweepParameter::Severity => {
                if self.benchmark.kind != BenchmarkKind::CovariateShift {
                    return Err(DcmError::config(
                        "sweeping severity needs benchmark.kind = covariate_shift",
                    ));
                }
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(DcmError::config(format!(
                        "severity must be >= 0, got {value}"
                    )));
                }
                cfg.benchmark.corruption_severity = value;
            }
        }
        cfg.sweep = None;
        cfg.benchmark.validate()?;
        cfg.dcm.validate()?;
        Ok(cfg)
    }
}

fn describe(e: toml::de::Error) -> DcmError {
    DcmError::format("config", e.message().to_string())
}

impl FromStr for ExperimentConfig {
    type Err = DcmError;

    /// Parses and validates a TOML config. Only `mode` and `benchmark.kind`
    /// are required; unknown keys are rejected.
    fn from_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(describe)?;
        if !table.contains_key("mode") {
            return Err(DcmError::format("config", "missing required key `mode`"));
        }
        let kind_value = table
            .get("benchmark")
            .and_then(|b| b.get("kind"))
            .cloned()
            .ok_or_else(|| DcmError::format("config", "missing required key `benchmark.kind`"))?;
        let kind: BenchmarkKind = kind_value.try_into().map_err(describe)?;

        // fill unset benchmark keys from the canonical spec of that kind
        let canonical = toml::Table::try_from(BenchmarkSpec::canonical(kind))
            .map_err(|e| DcmError::format("config", e.to_string()))?;
        let Some(toml::Value::Table(bench)) = table.get_mut("benchmark") else {
            return Err(DcmError::format("config", "`benchmark` must be a table"));
        };
        for (k, v) in canonical {
            bench.entry(k).or_insert(v);
        }

        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(describe)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DcmError::io(path, e))?;
    text.parse()
}
