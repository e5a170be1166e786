use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "cat", version, about = "Conformal calibration, verification, monitoring and control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for reports and CSV artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Failure probability; overrides the config.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Calibration size; overrides the config.
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Conformal quantile of a list of scores.
    Calibrate,
    /// Verify a learned component's outputs against a target set.
    VerifyLec,
    /// Verify closed-loop trajectories against an STL spec or a reach tube.
    VerifyLeas,
    /// Build prediction regions for trajectory forecasts.
    Abstract,
    /// Calibrate a predictive monitor and evaluate it on test trajectories.
    Monitor,
    /// Run closed-loop control episodes with calibrated safety margins.
    Control,
    /// Registered experiments.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Lower bound on the satisfaction probability of an STL spec.
    Smc,
}

#[derive(Subcommand, Debug)]
enum ExperimentAction {
    /// Run the named experiment.
    Run { name: String },
    /// List experiment names.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let res = match cli.command {
        Command::Calibrate => commands::calibrate(c),
        Command::VerifyLec => commands::verify_lec(c),
        Command::VerifyLeas => commands::verify_leas(c),
        Command::Abstract => commands::abstract_regions(c),
        Command::Monitor => commands::monitor(c),
        Command::Control => commands::control(c),
        Command::Experiment { action: ExperimentAction::Run { name } } => commands::experiment(c, &name),
        Command::Experiment { action: ExperimentAction::List } => {
            cat_core::scenarios::experiments::EXPERIMENTS.iter().for_each(|n| println!("{n}"));
            Ok(0)
        }
        Command::Smc => commands::smc(c),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
