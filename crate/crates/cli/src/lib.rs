//! Command-line harness: builds renormalization maps, fits optimized maps,
//! and runs the moment-inversion benchmarks, writing CSV/JSON tables.

// NaN-rejecting comparisons are written as `!(x < y)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::RunOutput;
use crate::config::{Command, FamilyArg, Format, Overrides, RunConfig, TargetArg};
use crate::error::CliError;

/// Default output directory when neither the config nor `--out` names one.
pub const DEFAULT_OUT: &str = "phiclosure-out";

#[derive(Debug, Parser)]
#[command(name = "phiclosure", version, about = "Renormalization maps and moment-closure benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Build one map and write it with a sampled curve.
    FitMap(RunArgs),
    /// Sample several maps against their targets on a common window.
    CompareMaps(RunArgs),
    /// L2 errors of optimized fits over a grid of K and interval sizes.
    ErrorTable(RunArgs),
    /// Invert the moments of a single beam along +z.
    InvertBeam(RunArgs),
    /// Invert the moments of two beams along +z and +x.
    InvertDoubleBeam(RunArgs),
    /// Invert the moments of the six-Gaussian intensity.
    InvertSixGaussian(RunArgs),
    /// Six-Gaussian L2 error as a function of N.
    ErrorDecay(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long = "K")]
    pub k: Option<u32>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    pub interval: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Sub {
    fn split(self) -> (Command, RunArgs) {
        match self {
            Sub::FitMap(a) => (Command::FitMap, a),
            Sub::CompareMaps(a) => (Command::CompareMaps, a),
            Sub::ErrorTable(a) => (Command::ErrorTable, a),
            Sub::InvertBeam(a) => (Command::InvertBeam, a),
            Sub::InvertDoubleBeam(a) => (Command::InvertDoubleBeam, a),
            Sub::InvertSixGaussian(a) => (Command::InvertSixGaussian, a),
            Sub::ErrorDecay(a) => (Command::ErrorDecay, a),
        }
    }
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            target: self.target,
            family: self.family,
            k: self.k,
            n: self.n,
            interval: self.interval.as_ref().map(|v| [v[0], v[1]]),
            x0: self.x0,
            seed: self.seed,
            out: self.out.clone(),
            format: self.format,
        }
    }
}

/// Loads the config, applies the flag overrides and validates.
pub fn resolve_config(command: Command, args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(command, &args.overrides())?;
    config.validate()?;
    Ok(config)
}

pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    output
        .artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            fs::write(&path, &a.contents).map_err(io(&path))?;
            Ok(path)
        })
        .collect()
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let (command, args) = cli.command.split();
    let result = resolve_config(command, &args).and_then(|config| {
        let output = commands::run(&config)?;
        let dir = config.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        for path in write_outputs(&dir, &output)? {
            println!("{}", path.display());
        }
        Ok(output.failures)
    });
    exit_code(&result)
}

/// 0 on success, 3 when some row or inversion failed numerically, otherwise
/// the error's own code. Diagnostics go to stderr.
pub fn exit_code(result: &Result<Vec<String>, CliError>) -> i32 {
    match result {
        Ok(failures) if failures.is_empty() => 0,
        Ok(failures) => {
            for f in failures {
                eprintln!("numerical failure: {f}");
            }
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
