//! Command-line front end: synthetic data, feature selection, leave-one-out
//! evaluation and ablation sweeps. Every command writes its outputs and a
//! `manifest.txt` into `--out-dir`.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use tmc_adapt::dataset::Movement;
use tmc_adapt::pipeline::Variant;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid input:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tmc", version, about = "Turning-movement count estimation by instance transfer")]
pub struct Cli {
    /// Worker threads for fold and grid parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic intersection network.
    Synth(SynthArgs),
    /// Fit the Lasso and write the coefficient table.
    Select(SelectArgs),
    /// Leave-one-intersection-out evaluation.
    Loo(LooArgs),
    /// Leave-one-out over a grid of mixture sizes and balance weights.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MovementArg {
    Left,
    Through,
    Right,
    All,
}

impl MovementArg {
    pub fn movements(self) -> Vec<Movement> {
        match self {
            MovementArg::Left => vec![Movement::Left],
            MovementArg::Through => vec![Movement::Through],
            MovementArg::Right => vec![Movement::Right],
            MovementArg::All => Movement::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    ItmlGbbw,
    SourceOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::ItmlGbbw => Variant::ItmlGbbw,
            VariantArg::SourceOnly => Variant::SourceOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Settings file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Master seed; overrides `seed` in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    pub movement: MovementArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub intersections: usize,
    #[arg(long, default_value_t = 1.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 96)]
    pub intervals: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// `cv` or a fixed penalty; overrides `lasso.lambda`.
    #[arg(long)]
    pub lambda: Option<String>,
}

#[derive(Debug, Args)]
pub struct LooArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Variants to evaluate; repeatable. Default: the config's `variant` if
    /// set, otherwise all three.
    #[arg(long, value_enum)]
    pub variant: Vec<VariantArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Grid file with `n_components`, `n_samples` and `alpha` lists.
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Files written by a command.
#[derive(Debug, Clone, Default)]
pub struct Written {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

pub fn run(cli: Cli) -> Result<Written, CliError> {
    let pool = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Select(a) => commands::select(&a),
        Command::Loo(a) => commands::loo(&a),
        Command::Sweep(a) => commands::sweep(&a),
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Written, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}
