//! `gametune`: detect action bounds, train performance maps, validate them
//! and compare against constant-gain baselines.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gametune::{Learner, UtilityVariant};

use crate::config::{ExperimentConfig, ScenarioRef};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "gametune",
    version,
    about = "Self-tuning PID gains via event-based potential games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search constant gains and write the stable action box.
    Bounds(Common),
    /// Train performance maps inside the detected box.
    Train {
        #[command(flatten)]
        common: Common,
        /// Bounds document from `bounds` [default: <out>/bounds.toml]
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
    /// Evaluate trained maps on the fixed, random and per-setpoint scenarios.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Map table from `train` [default: <out>/maps.csv]
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Evaluate random constant-gain controllers drawn from the full ranges.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Also evaluate these trained maps and write comparison.csv
        #[arg(long)]
        maps: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// type1 or type2
    #[arg(long)]
    utility: Option<UtilityVariant>,
    /// br (best response) or gb (gradient based)
    #[arg(long)]
    learner: Option<Learner>,
    /// static, random, or a scenario TOML path
    #[arg(long)]
    scenario: Option<String>,
}

impl Common {
    fn context(&self) -> Result<commands::Context, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(v) = self.utility {
            cfg.game = cfg.game.with_variant(v);
        }
        if let Some(l) = self.learner {
            cfg.game = cfg.game.with_learner(l);
        }
        if let Some(s) = &self.scenario {
            cfg.scenario = ScenarioRef::Named(s.clone());
        }
        commands::Context::new(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bounds(common) => commands::bounds(&common.context()?),
        Command::Train { common, bounds } => {
            commands::train_cmd(&common.context()?, bounds.as_deref())
        }
        Command::Validate { common, maps } => {
            commands::validate(&common.context()?, maps.as_deref())
        }
        Command::Baseline { common, maps } => {
            commands::baseline(&common.context()?, maps.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
