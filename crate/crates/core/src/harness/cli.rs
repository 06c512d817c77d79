use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{parse_config, ExperimentConfig, Mode};
use super::io::write_atomic;
use super::run::{run_experiment, CertificateRow};
use crate::datagen::LabeledDataset;
use crate::dcm::{finetune_ood, finetune_sc, pretrain, DcmConfig, TrainRun, TrainingManifest};
use crate::error::{DcmError, Result};
use crate::metrics::{evaluate_records, SelectivePopulation};
use crate::netcore::{load_checkpoint, save_checkpoint};
use crate::scoring::{score_dataset, scores_from_csv, scores_to_csv, ScoreKind};

#[derive(Debug, Parser)]
#[command(name = "dcm", version, about = "Data-driven confidence minimization")]
pub struct Cli {
    /// Experiment config (TOML). Training subcommands read its `dcm` and
    /// `model` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train a classifier on a labeled CSV and save a checkpoint.
    Pretrain {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fine-tune with confidence minimization on an unlabeled CSV.
    FinetuneOod {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Uncertainty set; only its feature columns are used.
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fine-tune for selective classification using validation errors.
    FinetuneSc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write per-example OOD scores of a dataset.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "msp")]
        kind: ScoreKind,
        #[command(flatten)]
        classes: DataArgs,
    },
    /// Compute metrics from a score CSV.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// Include OOD-tagged rows in the selective metrics.
        #[arg(long)]
        all_examples: bool,
    },
    /// Run the experiment described by `--config`.
    Experiment,
    /// Run a theory check and print the separation certificates.
    TheoryCheck,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
}

struct Ctx {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn dcm(&self, lambda: Option<f64>) -> Result<DcmConfig> {
        let mut cfg = self
            .config
            .as_ref()
            .map(|c| c.dcm.clone())
            .unwrap_or_default();
        if let Some(l) = lambda {
            cfg.lambda = l;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = self
            .config
            .clone()
            .ok_or_else(|| DcmError::config("this subcommand needs --config"))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn finish_training(
    stage: &str,
    cfg: &DcmConfig,
    run: &TrainRun,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    save_checkpoint(&run.model, out)?;
    let manifest = TrainingManifest::new(stage, cfg, run, Some(out.display().to_string()));
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| DcmError::format("training manifest", e.to_string()))?;
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".json");
    write_atomic(Path::new(&manifest_path), &json)?;
    for w in &run.warnings {
        writeln!(stdout, "warning: {w}").ok();
    }
    let last = run
        .epoch_losses
        .last()
        .map_or(String::from("-"), |l| format!("{l:.6}"));
    writeln!(
        stdout,
        "{stage}: final epoch loss {last}, saved {}",
        out.display()
    )
    .ok();
    Ok(())
}

/// One line per certificate.
pub fn certificate_table(rows: &[CertificateRow]) -> String {
    let mut s = format!(
        "{:>6} {:>12} {:>6} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>5} {:>5} {:>5}\n",
        "seed",
        "variant",
        "set",
        "eps_hat",
        "eps_max",
        "obj_gap",
        "id_lb",
        "ood_ub",
        "min_id",
        "max_ood",
        "sep",
        "hold",
        "ok"
    );
    for r in rows {
        let c = &r.certificate;
        s.push_str(&format!(
            "{:>6} {:>12} {:>6} {:>10.3e} {:>10.3e} {:>10.3e} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>5} {:>5} {:>5}\n",
            r.seed,
            r.variant,
            r.set,
            c.epsilon_hat,
            c.epsilon_threshold,
            c.objective_gap,
            c.id_msp_lower_bound,
            c.ood_msp_upper_bound,
            c.min_id_msp,
            c.max_ood_msp,
            c.separated,
            c.bounds_hold,
            c.consistent(),
        ));
    }
    s
}

/// Runs a parsed command line. Returns the process exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    let ctx = Ctx {
        config: cli.config.as_deref().map(parse_config).transpose()?,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Pretrain { train, data } => {
            let train = LabeledDataset::read_csv(&train, data.classes)?;
            let cfg = ctx.dcm(None)?;
            let model_cfg = ctx
                .config
                .as_ref()
                .map(|c| c.model.clone())
                .unwrap_or_default();
            let init = model_cfg.init(
                train.dim(),
                train.n_classes(),
                crate::rng::derive_seed(cfg.seed, "init"),
            )?;
            let run = pretrain(&init, &train, &cfg)?;
            finish_training("pretrain", &cfg, &run, &ctx.out("pretrained.ckpt"), stdout)?;
        }
        Command::FinetuneOod {
            model,
            train,
            unlabeled,
            lambda,
            data,
        } => {
            let model = load_checkpoint(&model)?;
            let train = LabeledDataset::read_csv(&train, data.classes.or(Some(model.n_classes())))?;
            let unc = LabeledDataset::read_csv(&unlabeled, Some(model.n_classes()))?;
            let cfg = ctx.dcm(lambda)?;
            let run = finetune_ood(&model, &train, unc.features(), &cfg)?;
            finish_training("finetune_ood", &cfg, &run, &ctx.out("dcm.ckpt"), stdout)?;
        }
        Command::FinetuneSc {
            model,
            train,
            val,
            lambda,
            data,
        } => {
            let model = load_checkpoint(&model)?;
            let n = data.classes.or(Some(model.n_classes()));
            let train = LabeledDataset::read_csv(&train, n)?;
            let val = LabeledDataset::read_csv(&val, n)?;
            let cfg = ctx.dcm(lambda)?;
            let run = finetune_sc(&model, &train, &val, &cfg)?;
            finish_training("finetune_sc", &cfg, &run, &ctx.out("dcm_sc.ckpt"), stdout)?;
        }
        Command::Score {
            model,
            data,
            kind,
            classes,
        } => {
            let model = load_checkpoint(&model)?;
            let data =
                LabeledDataset::read_csv(&data, classes.classes.or(Some(model.n_classes())))?;
            let records = score_dataset(&model, &data, &[kind])?;
            let out = ctx.out("scores.csv");
            write_atomic(&out, scores_to_csv(&records).as_bytes())?;
            writeln!(
                stdout,
                "wrote {} scores to {}",
                records.len(),
                out.display()
            )
            .ok();
        }
        Command::Evaluate {
            scores,
            all_examples,
        } => {
            let text = std::fs::read_to_string(&scores).map_err(|e| DcmError::io(&scores, e))?;
            let records = scores_from_csv(&text)?;
            let mut opts = ctx
                .config
                .as_ref()
                .map(|c| c.eval_options())
                .unwrap_or_default();
            opts.population = if all_examples {
                SelectivePopulation::All
            } else {
                SelectivePopulation::IdOnly
            };
            let report = evaluate_records(&records, &opts)?;
            let csv = report.to_csv(&opts);
            if let Some(out) = &ctx.out {
                write_atomic(out, csv.as_bytes())?;
            }
            write!(stdout, "{csv}").ok();
        }
        Command::Experiment => {
            let cfg = ctx.experiment()?;
            let outcome = run_experiment(&cfg)?;
            let m = &outcome.manifest;
            for w in &m.warnings {
                writeln!(stdout, "warning: {w}").ok();
            }
            for f in &m.failures {
                writeln!(
                    stdout,
                    "failed: seed {} {:?}: {}",
                    f.seed, f.sweep_value, f.message
                )
                .ok();
            }
            writeln!(
                stdout,
                "{} rows from {}/{} runs in {:.1}s, written to {}",
                outcome.rows.len(),
                m.n_runs - m.n_failed,
                m.n_runs,
                m.wall_clock_secs,
                cfg.output_dir.display()
            )
            .ok();
            if m.partial {
                return Ok(1);
            }
        }
        Command::TheoryCheck => {
            let mut cfg = match ctx.experiment() {
                Ok(c) => c,
                Err(_) if ctx.config.is_none() => {
                    let mut c = ExperimentConfig::premise_theory_check();
                    c.seed = ctx.seed.unwrap_or(0);
                    if let Some(o) = &ctx.out {
                        c.output_dir = o.clone();
                    }
                    c
                }
                Err(e) => return Err(e),
            };
            cfg.mode = Mode::TheoryCheck;
            cfg.validate()?;
            let outcome = run_experiment(&cfg)?;
            write!(stdout, "{}", certificate_table(&outcome.certificates)).ok();
            let bad = outcome
                .certificates
                .iter()
                .filter(|c| !c.certificate.consistent())
                .count();
            if bad > 0 || outcome.manifest.partial {
                writeln!(stdout, "{bad} certificate(s) failed a deterministic check").ok();
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Entry point used by the `dcm` binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
