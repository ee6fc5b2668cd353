//! `rlcc` command-line front-end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rlcc::sim::SweepParam;
use rlcc::PropagationMode;

#[derive(Debug, Parser)]
#[command(name = "rlcc", version, about = "Pseudo-label refinement with clustering consensus")]
pub struct Cli {
    /// Output directory (simulate, sweep) or file (other commands; stdout if omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate inputs and exit without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a multi-generation simulation from a JSON config.
    Simulate { config: PathBuf },
    /// Consensus matrix between two saved partitions.
    Consensus {
        prev: PathBuf,
        curr: PathBuf,
        /// Row-normalize before writing.
        #[arg(long)]
        normalize: bool,
    },
    /// Refine the current partition's labels against the previous one.
    Refine {
        prev: PathBuf,
        curr: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Soft)]
        mode: Mode,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long, default_value_t = 30.0)]
        tau: f64,
        /// Hard-label weight in blend mode.
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// Previous generation's prototype bank (soft and blend modes).
        #[arg(long)]
        prototypes: Option<PathBuf>,
        /// Current embeddings (soft and blend modes).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run one simulation per parameter value and summarize.
    Sweep {
        config: PathBuf,
        /// alpha, tau, beta or flip_rate
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
    },
    /// ARI, NMI and pairwise F of a partition (or label matrix argmax) against truth.
    Metrics { pred: PathBuf, truth: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Hard,
    Soft,
    Blend,
}

impl From<Mode> for PropagationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Hard => PropagationMode::Hard,
            Mode::Soft => PropagationMode::Soft,
            Mode::Blend => PropagationMode::Blend,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n.into());
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| commands::run(&cli)),
        Err(e) => Err(commands::Failure::Runtime(e.into())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
