//! `warpforge`: per-pair deformable registration from the command line.
//!
//! Exit codes: 0 success, 2 bad flags or configuration, 3 I/O or malformed
//! input files, 4 numerical failure (non-finite loss, degenerate input).

mod analyze;
mod config;
mod error;
mod output;
mod phantom;
mod register;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunFlags;
use crate::error::EXIT_OK;

#[derive(Parser, Debug)]
#[command(
    name = "warpforge",
    version,
    about = "Deformable 2D registration with an untrained U-Net"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a moving image onto a fixed image.
    Register(RegisterArgs),
    /// Generate a synthetic phantom, its label map and optionally a warped copy.
    MakePhantom(PhantomArgs),
    /// Fold statistics and Jacobian map for a stored field.
    Analyze(AnalyzeArgs),
    /// Registrations over a grid of one regularizer parameter and seeds.
    Sweep(SweepArgs),
}

#[derive(clap::Args, Debug)]
pub struct RegisterArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub moving: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub fixed: Option<PathBuf>,
    /// Label map of the moving image, warped with nearest-neighbour lookup
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
    /// Network initialization seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repeat the run recorded in a manifest.json; excludes the other inputs
    #[arg(long, conflicts_with_all = ["moving", "fixed", "labels", "seed"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct PhantomArgs {
    /// shepp or body
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Additive Gaussian noise standard deviation
    #[arg(long)]
    pub noise: Option<f64>,
    /// Gaussian blur width in pixels
    #[arg(long)]
    pub blur: Option<f64>,
    /// Seed for the noise and the synthetic warp
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a copy warped by a random fold-free field of this peak size
    #[arg(long)]
    pub warp_max: Option<f64>,
    /// Correlation length of the synthetic warp in pixels
    #[arg(long, default_value_t = 12.0, requires = "warp_max")]
    pub warp_smoothness: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Moving image; with --fixed, also writes metrics.json
    #[arg(long, requires = "fixed")]
    pub moving: Option<PathBuf>,
    #[arg(long, requires = "moving")]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
    /// Swept parameter: lambda, sigma or alpha [default: sigma for gauss, lambda otherwise]
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated parameter values
    #[arg(long, value_delimiter = ',', required = true)]
    pub param_grid: Vec<f64>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Concurrent registrations, capped by WARPFORGE_THREADS
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Register(args) => register::run(&args),
        Command::MakePhantom(args) => phantom::run(&args),
        Command::Analyze(args) => analyze::run(&args),
        Command::Sweep(args) => sweep::run(&args),
    };
    match outcome {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
