//! `ncsim`: collect teacher data, train imitators and run closed-loop experiments.

mod commands;
mod error;
mod logs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ncsim", version, about = "Neural imitation of nonlinear MPC: data, training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, propagated to every stage; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<subcommand>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantArg {
    Cartpole,
    Car,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CarControllerArg {
    Nmpc,
    Nc,
    Pp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CartpoleControllerArg {
    Nmpc,
    Nc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferenceArg {
    Fixed,
    Float,
}

#[derive(Debug, Args)]
pub struct CarControllerArgs {
    #[arg(long, value_enum)]
    pub controller: CarControllerArg,
    /// Model file; required for `nc`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fixed")]
    pub inference: InferenceArg,
    /// Bundled track name or race line CSV [default: the config's evaluation track].
    #[arg(long)]
    pub track: Option<String>,
    #[arg(long)]
    pub laps: Option<usize>,
    /// Width (m) of the distance-error histogram bins.
    #[arg(long, default_value_t = 0.02)]
    pub bin_width: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Share of the data held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Skip the cartpole sensor quantization and velocity-shift copy.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record NMPC teacher demonstrations.
    Collect {
        #[arg(long, value_enum)]
        plant: PlantArg,
        /// Simulated seconds: in total for the cartpole, per speed factor for the car.
        #[arg(long)]
        duration: Option<f64>,
        /// Car collection track [default: the config's training track].
        #[arg(long)]
        track: Option<String>,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Final share of pruned weights.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Float-phase epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Quantization-aware epochs.
        #[arg(long)]
        qat_epochs: Option<usize>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Validation error and fixed-point deviation of a trained model.
    EvalModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Drive laps on a race line.
    Race {
        #[command(flatten)]
        car: CarControllerArgs,
        #[arg(long)]
        speed_factor: Option<f64>,
    },
    /// Cartpole closed loop over the target script.
    Swingup {
        #[arg(long, value_enum)]
        controller: CartpoleControllerArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "fixed")]
        inference: InferenceArg,
        /// Controller rate (Hz).
        #[arg(long)]
        rate: Option<f64>,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Largest speed factor that completes the laps, then a run at it.
    SearchF {
        #[command(flatten)]
        car: CarControllerArgs,
    },
    /// Recompute a finished run from its log and compare with its report.
    Replay {
        run: PathBuf,
        /// Teacher labels to re-derive for a collect run.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Collect { .. } => "collect",
            Command::Train { .. } => "train",
            Command::EvalModel { .. } => "eval-model",
            Command::Race { .. } => "race",
            Command::Swingup { .. } => "swingup",
            Command::SearchF { .. } => "search-f",
            Command::Replay { .. } => "replay",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
