use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod commands;
mod manifest;
mod poolfile;

use commands::{AuditArgs, CompareArgs, DensityArgs, SimulateArgs, SolveArgs};

/// Stochastic fixed-point equations: solve, audit, estimate densities and
/// cross-check against discrete process simulations.
#[derive(Debug, Parser)]
#[command(name = "sfpe", version)]
struct Cli {
    /// Master seed; every output is a function of the arguments and this seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving output files and manifests.
    #[arg(long, global = true, env = "SFPE_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Iterate a model's fixed-point map on sample pools.
    Solve(SolveArgs),
    /// Check the coefficient conditions (and, given pools, support and lattice).
    Audit(AuditArgs),
    /// Density grid of one solved pool.
    Density(DensityArgs),
    /// Simulate a discrete process and scale it to its limit.
    Simulate(SimulateArgs),
    /// Kolmogorov distance and its transport bound between a pool and samples.
    Compare(CompareArgs),
    /// List the model zoo with parameter documentation.
    Models,
    /// Re-run the command recorded in a manifest and check its digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_AUDIT: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<sfpe_core::Error>() {
            return match e {
                sfpe_core::Error::Config(_) | sfpe_core::Error::Domain(_) | sfpe_core::Error::Json(_) => EXIT_CONFIG,
                sfpe_core::Error::Numerical(_) => EXIT_NUMERICAL,
                sfpe_core::Error::Io(_) => 1,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_CONFIG;
        }
    }
    1
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global().context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Models => {
            println!("{}", serde_json::to_string_pretty(&sfpe_core::models::catalog())?);
            Ok(())
        }
        Command::Replay { manifest } => manifest::replay(&manifest, cli.out_dir, cli.threads),
        command => {
            init_threads(cli.threads)?;
            let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from("."));
            manifest::execute(command, cli.seed, cli.threads, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
