//! `seqrec`: data preparation, training, evaluation, ablations, benchmarks and
//! bias-curve export.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Output root for run directories; defaults to `./runs`.
pub const OUT_ENV: &str = "SEQREC_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "seqrec",
    version,
    about = "Sequential recommender with functional temporal bias and attention-free token mixing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a MovieLens ratings file into a split file plus JSON sidecar.
    Prepare(PrepareArgs),
    /// Train a model with early stopping; writes metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test split.
    Eval(EvalArgs),
    /// Time bias construction and block forward+backward over a sweep.
    Bench(BenchArgs),
    /// Train a sweep of bias functions and map switches; writes one comparative CSV.
    Ablate(AblateArgs),
    /// Export bias-function curves as `delta_t,weight` CSV.
    PlotBias(PlotBiasArgs),
    /// Print a configuration's parameter layout and per-block multiply counts.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// MovieLens ratings file (`::`-separated .dat or headed .csv).
    #[arg(long)]
    pub input: PathBuf,
    /// Output split file; the sidecar goes to `<output>.json`.
    #[arg(long)]
    pub output: PathBuf,
    /// Most recent interactions kept per sequence.
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,
    /// Users with fewer interactions are dropped.
    #[arg(long, default_value_t = seqrec_core::data::DEFAULT_MIN_INTERACTIONS)]
    pub min_interactions: usize,
}

/// Where training data comes from.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Split file written by `prepare`.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use the deterministic cyclic synthetic dataset instead of a split file.
    #[arg(long)]
    pub synthetic: bool,
    /// Users in the synthetic dataset.
    #[arg(long, default_value_t = 500, requires = "synthetic")]
    pub synthetic_users: usize,
}

/// Flags that override config-file fields.
#[derive(Args, Debug, Clone)]
pub struct OverrideArgs {
    /// JSON config with `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and negative sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sequences per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate after warmup.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without a validation NDCG@10 gain before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Maximum sequence length n.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Model width d (also sets the FFN width when it would fall below d).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of stacked blocks.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Negatives per target position.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Temporal bias function kind.
    #[arg(long)]
    pub bias_kind: Option<String>,
    /// Mixer mode: aftm, qk_channels or qk_summed.
    #[arg(long)]
    pub mixer: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: OverrideArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory name under the output root.
    #[arg(long)]
    pub run_name: Option<String>,
    /// Print the parameter-count audit and exit without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Config the checkpoint was trained with (a run's `config.json`).
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint file (`epoch{k}.fxb`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to rank: `test` or `validation`.
    #[arg(long, default_value = "test", value_parser = ["test", "validation"])]
    pub split: String,
    /// Run directory name under the output root.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sequence lengths, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 512, 2048])]
    pub sweep_n: Vec<usize>,
    /// Model widths for the block benchmark, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize])]
    pub sweep_d: Vec<usize>,
    /// Benchmark groups to run: bias, block.
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("bias"), String::from("block")], value_parser = ["bias", "block"])]
    pub kernels: Vec<String>,
    /// Timed repetitions (at least 30).
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Discarded warmup runs (at least 5).
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Run directory name under the output root.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub overrides: OverrideArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Bias function kinds to sweep, e.g. `pow,exp,zero` or `all`.
    #[arg(long, value_delimiter = ',')]
    pub functions: Vec<String>,
    /// Map-switch rows to sweep: full, no_qk, no_positional, no_temporal, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub maps: Vec<String>,
    /// Run directory name under the output root.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Args, Debug)]
pub struct PlotBiasArgs {
    /// Kinds to plot at their initial parameters.
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("pow"), String::from("exp")])]
    pub kinds: Vec<String>,
    /// Plot the learned temporal bias of every block in this checkpoint instead.
    #[arg(long, requires = "config")]
    pub checkpoint: Option<PathBuf>,
    /// Config matching `--checkpoint`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Largest elapsed time, in model time units (days by default).
    #[arg(long, default_value_t = 365.0)]
    pub max_delta: f64,
    /// Samples per curve.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Run directory name under the output root.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    /// JSON config to describe; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::PlotBias(a) => commands::plot_bias(a),
        Command::Describe(a) => commands::describe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
