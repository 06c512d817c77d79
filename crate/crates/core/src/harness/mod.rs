//! Experiment configs, the experiment runner and the command-line front end.

pub mod cli;
pub mod config;
pub mod io;
pub mod run;

pub use config::{
    parse_config, EvalConfig, ExperimentConfig, Mode, ModelConfig, Sweep, SweepParameter,
    TheoryConfig,
};
pub use run::{
    aggregate, execute_experiment, mean_stderr, run_experiment, write_outputs, AggregateRow,
    CertificateRow, ExperimentOutcome, MeanStderr, ResultRow, RunFailure, RunManifest,
};
