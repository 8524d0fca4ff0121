mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crossmax::Error;

/// Open-set skeleton action recognition pipeline.
#[derive(Debug, Parser)]
#[command(name = "crossmax", version)]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Derive joint, bone and velocity sequences.
    Derive(DeriveArgs),
    /// Add Gaussian noise or random occlusion to sequences.
    Perturb(PerturbArgs),
    /// Generate, look up or export class splits.
    #[command(subcommand)]
    Splits(SplitsCommand),
    /// Write a seeded synthetic dataset.
    Synth,
    /// Train the three-branch model.
    Train(TrainArgs),
    /// Extract embeddings and logits.
    Extract(ExtractArgs),
    /// Print the CrossMMD of three embedding files.
    Mmd(MmdArgs),
    /// Score logits into open-set probabilities.
    Score(ScoreArgs),
    /// Compute metrics and curves of a score table.
    Eval(EvalArgs),
    /// Like eval, plus SVG plots.
    Report(EvalArgs),
    /// Run every stage from the config.
    Pipeline,
}

#[derive(Debug, Args, Serialize)]
pub struct DeriveArgs {
    /// Skeleton file.
    #[arg(long)]
    pub input: PathBuf,
    /// Topology file; a chain over the joints by default.
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Gaussian,
    Occlusion,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PerturbKind,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    /// Occlusion ratios to draw from.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3])]
    pub thetas: Vec<f64>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitsCommand {
    /// Draw a random split.
    Generate {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        unseen: usize,
    },
    /// Write one published split.
    Fixture {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        run: u32,
        /// Class names, one per line, in index order.
        #[arg(long)]
        class_names: Option<PathBuf>,
    },
    /// Write all published splits.
    Export,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training skeleton file.
    #[arg(long)]
    pub train: PathBuf,
    /// Split manifest.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Skeleton file to embed.
    #[arg(long)]
    pub data: PathBuf,
    /// Training skeleton file whose seen-class samples form the gallery;
    /// without it the logits carry zero distances.
    #[arg(long)]
    pub gallery_data: Option<PathBuf>,
    /// Prefix of the output files.
    #[arg(long, default_value = "test")]
    pub prefix: String,
}

#[derive(Debug, Args, Serialize)]
pub struct MmdArgs {
    #[arg(long)]
    pub joints: PathBuf,
    #[arg(long)]
    pub bones: PathBuf,
    #[arg(long)]
    pub velocities: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub logits: PathBuf,
    /// Gallery embedding files (joints, bones, velocities).
    #[arg(long, num_args = 3, requires = "embeddings")]
    pub gallery: Option<Vec<PathBuf>>,
    /// Test embedding files (joints, bones, velocities); with --gallery the
    /// distances are recomputed.
    #[arg(long, num_args = 3, requires = "gallery")]
    pub embeddings: Option<Vec<PathBuf>>,
    /// Overrides the config's score variant.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
