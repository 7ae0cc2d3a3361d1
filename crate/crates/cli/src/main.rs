//! `gcvae`: generate synthetic benchmarks, train guided clustering models,
//! assign clusters to new rows, and evaluate assignments.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcvae::data::SyntheticSpec;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "gcvae", version, about = "Guided clustering with a Gaussian-mixture VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic guided-clustering dataset as CSV.
    Generate(GenerateArgs),
    /// Pretrain, initialize the mixture, and train; writes a run directory.
    Train(TrainArgs),
    /// Assign clusters to rows of a CSV using a trained checkpoint.
    Infer(InferArgs),
    /// Score assignments against labels and profile the clusters.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output CSV path; the generator settings go to `<out>.spec.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().k_true)]
    pub k_true: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().n)]
    pub n: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().d_latent_true)]
    pub d_latent_true: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().d_x)]
    pub d_x: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().d_y)]
    pub d_y: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().cluster_separation)]
    pub cluster_separation: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().distractor_dims)]
    pub distractor_dims: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().distractor_scale)]
    pub distractor_scale: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().y_noise_sd)]
    pub y_noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML config (or a run manifest, to repeat its run). Fields left out
    /// take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated guide column names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub guide_cols: Vec<String>,
    /// Ground-truth label column, excluded from the features and used for
    /// validation ACC/NMI. Defaults to `label` when such a column exists.
    #[arg(long)]
    pub label_col: Option<String>,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Write validation latent means and assignments after every epoch.
    #[arg(long)]
    pub snapshots: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// guided or unguided_joint.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub epochs_pretrain: Option<usize>,
    #[arg(long)]
    pub epochs_train: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beta_train: Option<f64>,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with the checkpoint's feature columns (guide columns are ignored
    /// unless the model is an unguided baseline).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `assignments.csv` and `latent.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Assignments CSV with a `cluster` column, optionally as `name=path`.
    /// Repeat to compare runs.
    #[arg(long, required = true)]
    pub assignments: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label_col: Option<String>,
    /// Comma-separated guide columns, reported after the features.
    #[arg(long, value_delimiter = ',')]
    pub guide_cols: Vec<String>,
    /// Output directory for `eval.json` and the profile tables.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
