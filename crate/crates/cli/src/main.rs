//! `extinct`: predictions, simulations and comparisons for the
//! first-extinction law.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure,
//! 4 cost guard.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod collapse;
mod config;
mod error;
mod output;
mod predict;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{
    BaxterArgs, CommandConfig, CompareArgs, ExperimentConfig, GenDistArgs, GridArgs, MarkovArgs, PredictArgs, SimArgs,
};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "extinct",
    version,
    about = "First-extinction times under repeated finite-sample resampling"
)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "EXTINCT_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a distribution with a target normalized entropy.
    GenDist(GenDistArgs),
    /// Mean, CDF/PDF points and quantiles of the first-extinction time.
    Predict(PredictArgs),
    /// Exact mean by subset enumeration, next to the quadrature mean.
    Baxter(BaxterArgs),
    /// Simulate extinction times by resampling or by the diffusion limit.
    Sim(SimArgs),
    /// KS comparison of samples against the law or against other samples.
    Compare(CompareArgs),
    /// z-compatibility grid over state counts and sample sizes.
    Grid(GridArgs),
    /// Collapse times of a Markov chain retrained on its own samples.
    Markov(MarkovArgs),
    /// Replay a JSON config, or the `config` block of a sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cmd: &CommandConfig) -> Result<(), CliError> {
    match cmd {
        CommandConfig::GenDist(a) => predict::gen_dist(a),
        CommandConfig::Predict(a) => predict::predict(a),
        CommandConfig::Baxter(a) => predict::baxter(a),
        CommandConfig::Sim(a) => simulate::sim(a),
        CommandConfig::Compare(a) => simulate::compare(a),
        CommandConfig::Grid(a) => simulate::grid(a),
        CommandConfig::Markov(a) => collapse::markov(a),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(e.to_string()))?;
    }
    let cmd = match cli.command {
        Command::GenDist(a) => CommandConfig::GenDist(a),
        Command::Predict(a) => CommandConfig::Predict(a),
        Command::Baxter(a) => CommandConfig::Baxter(a),
        Command::Sim(a) => CommandConfig::Sim(a),
        Command::Compare(a) => CommandConfig::Compare(a),
        Command::Grid(a) => CommandConfig::Grid(a),
        Command::Markov(a) => CommandConfig::Markov(a),
        Command::Run { config } => ExperimentConfig::load(&config)?.command,
    };
    dispatch(&cmd)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
