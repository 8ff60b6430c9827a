//! Command-line front end. `run` returns the path of the main output;
//! the binary prints it and nothing else on stdout.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
pub use commands::{aggregate, parse_matrix_csv, Aggregate, Dumps};
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "ifutsvm", version, about = "Fuzzy universum twin SVMs for imbalanced binary classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model with the fixed parameters and save it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write the sampling plan as plan.csv.
        #[arg(long)]
        dump_plan: bool,
        /// Also write per-sample scores as scores.csv.
        #[arg(long)]
        dump_scores: bool,
    },
    /// Score a saved model on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Split, grid-search, refit and test every model on every dataset.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// The benchmark repeated with label noise on the training split.
    NoiseStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Ranks and statistics for a precomputed accuracy matrix.
    Aggregate {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common }
            | Command::Benchmark { common }
            | Command::NoiseStudy { common }
            | Command::Aggregate { common } => common,
        }
    }
}

fn configure(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.validate_common()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<PathBuf> {
    let cfg = configure(cli.command.common())?;
    let go = || match &cli.command {
        Command::Train { dump_plan, dump_scores, .. } => commands::cmd_train(
            &cfg,
            Dumps {
                plan: *dump_plan,
                scores: *dump_scores,
            },
        ),
        Command::Eval { .. } => commands::cmd_eval(&cfg),
        Command::Benchmark { .. } => commands::cmd_benchmark(&cfg),
        Command::NoiseStudy { .. } => commands::cmd_noise_study(&cfg),
        Command::Aggregate { .. } => commands::cmd_aggregate(&cfg),
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(go),
        None => go(),
    }
}
