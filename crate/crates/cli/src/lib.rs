//! Command-line driver: configuration, artifact persistence, experiment
//! orchestration and the verification suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod store;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "hcnn", version, about = "Equivariant correlation networks on homogeneous spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the dataset described by [data].
    GenData(CommonArgs),
    /// Train on a generated dataset, single split or k-fold.
    Train(TrainArgs),
    /// Evaluate the saved checkpoint on its held-out samples.
    Eval(CommonArgs),
    /// Run the invariant suite; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Per-region permutation tests on trained-network features.
    Permtest(CommonArgs),
    /// Transform a volume dataset to its ensemble average propagator.
    Eap(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Cross-validation folds; overrides `train.folds`.
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Read translated correlation outputs from the nearest stored sample.
    /// A negative control: the equivariance check must then fail.
    #[arg(long)]
    pub break_equivariance: bool,
}

/// What a successful command reports.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: String,
    pub manifest: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<Outcome> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a.common, a.folds),
        Command::Eval(a) => commands::eval(&a),
        Command::Verify(a) => commands::verify(&a.common, a.break_equivariance),
        Command::Permtest(a) => commands::permtest(&a),
        Command::Eap(a) => commands::eap(&a),
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, S>(args: I) -> CliResult<Outcome>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("hcnn")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}
