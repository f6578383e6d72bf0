//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "omm", version, about = "Fit, evaluate and probe opinion market models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// JSON file with option overrides (fit, synthetic, replicates, ...).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides seeds in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "omm-out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Drop the intervention series (fits the model without interventions).
    #[arg(long, global = true)]
    pub no_interventions: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate synthetic groups of panels together with their generating model.
    Synth(SynthArgs),
    /// Fit a model jointly on one or more panels that share their signals.
    Fit(FitArgs),
    /// Temporal holdout: fit on the observed window, predict the rest.
    Eval(EvalArgs),
    /// Simulate forward from a fitted model.
    Simulate(SimulateArgs),
    /// Endogenous and intervention elasticities with time averages.
    Elasticity(ElasticityArgs),
    /// Counterfactual sweep over modulations of one intervention.
    Whatif(WhatifArgs),
    /// Local HTTP service over a fitted model and its dataset.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Fit(_) => "fit",
            Command::Eval(_) => "eval",
            Command::Simulate(_) => "simulate",
            Command::Elasticity(_) => "elasticity",
            Command::Whatif(_) => "whatif",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Use the default recovery configuration (overrides the config file's synthetic block).
    #[arg(long = "default")]
    pub use_default: bool,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset directories; a directory of dataset directories expands to all of them.
    #[arg(long = "data", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub lambda_reg: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Last bin of the observed window.
    #[arg(long)]
    pub obs_end: usize,
    /// Last bin of the prediction window (default: last bin of the data).
    #[arg(long)]
    pub pred_end: Option<usize>,
    /// Replicates averaged for the prediction.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Evaluate this model instead of fitting one on the observed window.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset supplying the signals and, with `--history`, the observed prefix.
    #[arg(long)]
    pub data: PathBuf,
    /// Last simulated bin (default: last bin of the signals).
    #[arg(long)]
    pub end: Option<usize>,
    /// Condition on the first N observed bins.
    #[arg(long, default_value_t = 0)]
    pub history: usize,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ElasticityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// First bin of the averaging window (default 1).
    #[arg(long)]
    pub start: Option<usize>,
    /// Last bin of the averaging window (default: last observed bin).
    #[arg(long)]
    pub end: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WhatifArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Index (0-based) or label of the modulated intervention.
    #[arg(long)]
    pub k_star: String,
    /// Last bin before the modulation; observed history up to here conditions the runs.
    #[arg(long)]
    pub changepoint: usize,
    /// Last simulated bin (default: last bin of the signals).
    #[arg(long)]
    pub end: Option<usize>,
    /// Modulations to sweep.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-1.0, -0.5, 0.0, 0.5, 1.0])]
    pub r: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub n_sims: usize,
    /// Simulate from scratch instead of conditioning on the observed bins before the changepoint.
    #[arg(long)]
    pub from_scratch: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Address to bind; loopback by default.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}
