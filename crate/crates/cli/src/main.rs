//! `graspkit` command-line front end.
//!
//! Exit status: 0 on success, 1 on validation errors (bad arguments,
//! missing or malformed inputs), 2 on runtime failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "graspkit",
    version,
    about = "Grasp refinement, evaluation, set matching and toy set-prediction training"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed (overrides the run config's seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Multiplier applied to coordinates of point-cloud files.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub scale: f64,
    /// Output directory (overrides the run config's output).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine a grasp set against an object with test-time adaptation.
    Refine(RefineArgs),
    /// Compute quality and diversity metrics of a grasp set.
    Evaluate(EvaluateArgs),
    /// Train a learnable grasp table with dynamic-static matching.
    TrainToy(TrainArgs),
    /// Match two grasp sets with the Hungarian algorithm.
    Match(MatchArgs),
    /// Merge metrics reports into one summary table.
    Report(ReportArgs),
}

/// Hand and object inputs.
#[derive(Debug, Clone, Args)]
pub struct Scene {
    /// Hand configuration (JSON); taken from the run config when omitted.
    #[arg(long)]
    pub hand: Option<PathBuf>,
    /// Object: a .ply/.obj/.xyz file, or `sphere:R`, `box:HX,HY,HZ`,
    /// `cylinder:R,HH` (meters). Defaults to the run config's first object.
    #[arg(long)]
    pub object: Option<String>,
    /// Samples for synthetic objects.
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineMode {
    /// Anchored distance with moderated translation.
    AbTta,
    /// Penetration plus vanilla distance with a free translation.
    PenVdis,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub scene: Scene,
    /// Grasp-set file to refine.
    #[arg(long)]
    pub grasps: PathBuf,
    #[arg(long, value_enum, default_value_t = RefineMode::AbTta)]
    pub mode: RefineMode,
    /// Override the number of descent steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scene: Scene,
    /// Grasp-set file to evaluate.
    #[arg(long)]
    pub grasps: PathBuf,
    /// Diversity bins ξ.
    #[arg(long, default_value_t = 16)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scene: Scene,
    /// Also train the dynamic-matching baselines with these penetration
    /// weights (e.g. `--baseline 500 --baseline 0`).
    #[arg(long = "baseline")]
    pub baselines: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Hand configuration (JSON); taken from the run config when omitted.
    #[arg(long)]
    pub hand: Option<PathBuf>,
    /// Predicted grasp set.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth grasp set.
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics reports written by `evaluate`, as `PATH` or `LABEL=PATH`.
    #[arg(required = true)]
    pub inputs: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(if e.validation { 1 } else { 2 })
        }
    }
}
