mod commands;
mod config;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Dataset;

#[derive(Debug, Parser)]
#[command(name = "ebpois", version, about = "Poisson empirical Bayes: classical estimators, tiny transformers, evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true, visible_alias = "spec")]
    pub config: Option<PathBuf>,
    /// Root output directory; each subcommand writes into its own folder below it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Force single-threaded numeric paths.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a transformer on the synthetic prior mixture.
    Train(TrainArgs),
    /// Evaluate estimators on synthetic or real data.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Check the constructed Robbins networks against the clipped Robbins rule.
    CertifyRobbins(CertifyArgs),
    /// Fit probes on frozen activations of a trained model.
    Probe(ProbeArgs),
    /// Wall-time scaling of estimators in the sequence length.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `softmax` or `linear-identity`.
    #[arg(long)]
    pub attention: Option<String>,
    /// Seed of the weight initialization (the global seed drives the data).
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Paired regret sweep over prior families and lengths.
    Synthetic(SyntheticArgs),
    /// Score estimators on NHL, MLB or word-frequency tasks.
    Real(RealArgs),
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// Comma-separated estimator and model ids.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Model checkpoint as `id=path`; repeatable.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub priors: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RealArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    /// CSV file, or a text file or directory of `.txt` files for word frequencies.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// NHL position filter: all, defender, center or winger.
    #[arg(long)]
    pub position: Option<String>,
    /// MLB half-season rule: calendar or median_event.
    #[arg(long)]
    pub midpoint: Option<String>,
    #[arg(long)]
    pub head_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub d: Option<usize>,
    /// Clip value.
    #[arg(long = "M")]
    pub m: Option<f64>,
    /// Logit scale.
    #[arg(long = "D")]
    pub big_d: Option<f64>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Maximum allowed deviation of the softmax network.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Maximum allowed deviation of the linear-attention network.
    #[arg(long, default_value_t = 1e-9)]
    pub linear_tol: f64,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated targets: frequency, npmle_density, x, atom_pmf.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = exit::classify(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(kind.code())
        }
    }
}
