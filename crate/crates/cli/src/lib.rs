//! Command-line pipeline around `scenario-core`.

pub mod commands;
pub mod config;
pub mod files;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::config::{parse_override, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "scenario",
    version,
    about = "Scenario forecasts from a sparse Bayesian dictionary model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scenarios: Option<PathBuf>,
    #[arg(long, global = true)]
    pub actuals: Option<PathBuf>,
    #[arg(long, global = true)]
    pub baseline: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set k=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic series CSV and its ground-truth model.
    Simulate,
    /// Fit a model to a series CSV.
    Train,
    /// Generate scenario ensembles for every instance of a series CSV.
    Forecast,
    /// Score scenarios against actuals, optionally against a baseline set.
    Evaluate,
    /// Contiguous k-fold cross-validation with pooled scoring.
    Cv,
}

impl Cli {
    /// Defaults, then `--config`, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::String(p.display().to_string()));
        let flags = [
            ("seed", self.seed.map(Value::from)),
            ("out", path(&self.out)),
            ("data", path(&self.data)),
            ("model", path(&self.model)),
            ("scenarios", path(&self.scenarios)),
            ("actuals", path(&self.actuals)),
            ("baseline", path(&self.baseline)),
        ];
        overrides.extend(
            flags
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| (k.to_string(), v))),
        );
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

pub fn run_command(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Simulate => commands::simulate(cfg),
        Command::Train => commands::train(cfg),
        Command::Forecast => commands::forecast(cfg),
        Command::Evaluate => commands::evaluate(cfg),
        Command::Cv => commands::cv(cfg),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    run_command(cli.command, &cfg)
}
