//! Command-line entry points and the HTTP watchdog service.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use halmit_core::harness::SweepParameter;

pub mod commands;
pub mod service;

#[derive(Debug, Parser)]
#[command(name = "halmit", version, about = "Hallucination watchdog for LLM agents")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the command's config section.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured domain.
    #[arg(long, global = true)]
    pub domain: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map the agent's generalization bound into the store.
    Explore {
        /// Keep the existing store and add to it.
        #[arg(long)]
        append: bool,
        /// Draw transformation probabilities from the policy checkpoint.
        #[arg(long)]
        policy: bool,
    },
    /// Train the value network on the samples of the event log.
    TrainPolicy,
    /// Print the verdict for one query.
    Check { query: String },
    /// Serve the watchdog over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Explore a synthetic world and score the monitor on it.
    Benchmark {
        /// Drive exploration with the policy checkpoint.
        #[arg(long)]
        policy: bool,
        /// Run the reinforced-versus-random convergence comparison instead.
        #[arg(long)]
        convergence: bool,
    },
    /// Repeat the benchmark across values of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepParam {
    GammaStop,
    EpsilonSim,
}

impl From<SweepParam> for SweepParameter {
    fn from(p: SweepParam) -> Self {
        match p {
            SweepParam::GammaStop => SweepParameter::GammaStop,
            SweepParam::EpsilonSim => SweepParameter::EpsilonSim,
        }
    }
}

/// Exit codes: 0 success, 1 error, 2 exploration stopped by its iteration limit.
pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = commands::load_config(&cli.global)?;
    match cli.command {
        Command::Explore { append, policy } => commands::explore(&config, append, policy),
        Command::TrainPolicy => commands::train_policy(&config),
        Command::Check { query } => commands::check(&config, &query, cli.global.domain.as_deref()),
        Command::Serve { addr } => service::serve(&config, &addr),
        Command::Benchmark { policy, convergence } => commands::benchmark(&config, policy, convergence),
        Command::Sweep { param, values } => commands::sweep(&config, param.into(), &values),
    }
}
