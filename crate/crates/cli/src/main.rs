mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Settings;

/// Environment variable that overrides the artifact directory of a config
/// file (an explicit `--out` still wins).
pub const OUT_ENV: &str = "UNALIGNED_CP_OUT";

const DEFAULT_OUT: &str = "unaligned-cp-out";

#[derive(Parser)]
#[command(name = "unaligned-cp", version, about = "CP decompositions with a functional mode observed at unaligned times")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Gaussian,
    Poisson,
}

#[derive(clap::Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    #[arg(long, default_value_t = 51)]
    pub p: usize,
    /// Size of the common time grid.
    #[arg(long, default_value_t = 251)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 8)]
    pub min_obs: usize,
    #[arg(long, default_value_t = 20)]
    pub max_obs: usize,
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_var: f64,
    /// Poisson rate shift.
    #[arg(long, default_value_t = 1e-10)]
    pub delta: f64,
    /// Also write the true functional factors on the grid as `xi.csv`.
    #[arg(long)]
    pub dump_xi: bool,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct DecomposeArgs {
    /// Flat TOML file with any of the option keys below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    /// Directory written by `decompose`.
    #[arg(long)]
    pub model: PathBuf,
    /// Data to score; defaults to the input recorded with the model.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset with its ground truth.
    Generate(GenerateArgs),
    /// Fit a decomposition and write factors, trajectory and summary.
    Decompose(DecomposeArgs),
    /// Score a fitted model against data.
    Evaluate(EvaluateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate(a) => run::generate(&a),
        Command::Decompose(a) => run::decompose(&a),
        Command::Evaluate(a) => run::evaluate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
