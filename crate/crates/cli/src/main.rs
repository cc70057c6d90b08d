//! `clsood`: generate synthetic benchmarks, score embeddings, calibrate
//! beta and evaluate OOD detection from the command line.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 data error.

mod commands;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clsood::scoring::Shrinkage;
use clsood::Method;

use crate::pipeline::{parse_shrinkage, BetaSource};

#[derive(Parser, Debug)]
#[command(
    name = "clsood",
    version,
    about = "Contrastive logit scores for post-hoc OOD detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    ClsM,
    ClsE,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic benchmark directory.
    GenSynth(GenSynthArgs),
    /// Score embeddings with one method and write `index,score`.
    Score(ScoreArgs),
    /// Estimate beta from training embeddings.
    Calibrate(CalibrateArgs),
    /// AUROC and FPR@TPR for ID vs OOD score files.
    Eval(EvalArgs),
    /// AUROC of a CLS variant over a grid of beta values.
    SweepBeta(SweepArgs),
    /// Mean Euclidean distance of query sets to the training set.
    DiagnoseDistance(DistanceArgs),
    /// Run several methods from a run manifest and tabulate them.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; individual flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub n_test_id: Option<usize>,
    #[arg(long)]
    pub n_near_ood: Option<usize>,
    #[arg(long)]
    pub n_far_ood: Option<usize>,
    #[arg(long)]
    pub class_alignment: Option<f64>,
    #[arg(long)]
    pub context_id: Option<f64>,
    #[arg(long)]
    pub context_near: Option<f64>,
    #[arg(long)]
    pub context_far: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub strength_min: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ScoringInputs {
    /// Prompt-bank manifest (JSON).
    #[arg(long)]
    pub bank: PathBuf,
    /// ID training embeddings, for beta estimation and feature-space baselines.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// `index,label` CSV of training classes (1..K).
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    /// `estimated`, `zero` or a number.
    #[arg(long, default_value = "estimated")]
    pub beta: BetaSource,
    #[arg(long, default_value_t = 1)]
    pub knn_k: usize,
    /// `auto` or a non-negative ridge.
    #[arg(long, default_value = "auto", value_parser = parse_shrinkage)]
    pub shrinkage: Shrinkage,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Query embeddings (EMB1).
    #[arg(long)]
    pub images: PathBuf,
    /// msp, maxlogit, energy, mcm, context, cls-m, cls-e, mahalanobis, rmds or knn.
    #[arg(long)]
    pub method: Method,
    #[command(flatten)]
    pub inputs: ScoringInputs,
    /// Score file; a `<stem>.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum, default_value = "cls-m")]
    pub variant: Variant,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// `index,score` CSV of ID samples.
    #[arg(long)]
    pub id: PathBuf,
    /// `index,score` CSV of OOD samples.
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.95")]
    pub levels: Vec<f64>,
    /// Method tag recorded in the report.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub id_images: PathBuf,
    #[arg(long)]
    pub ood_images: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Training embeddings; when given, the estimated beta is marked.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// `min:max:step`, inclusive of `max`.
    #[arg(long, default_value = "0:4:0.1")]
    pub grid: String,
    #[arg(long, value_enum, default_value = "cls-m")]
    pub variant: Variant,
    /// Curve file; a `<stem>.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct DistanceArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Query embedding files; each is reported under its file stem.
    #[arg(required = true)]
    pub queries: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Run manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Score(a) => commands::score(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Eval(a) => commands::eval(a),
        Command::SweepBeta(a) => commands::sweep_beta(a),
        Command::DiagnoseDistance(a) => commands::diagnose_distance(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
