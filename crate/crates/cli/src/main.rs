mod commands;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ngm::learning::{HiddenWidth, LambdaMode};
use ngm::numerics::NormKind;
use ngm::sampling::OrderingMode;
use ngm::NgmError;

/// Neural graphical models: train a dependency-constrained network on
/// tabular data, then query, sample and evaluate it.
#[derive(Debug, Parser)]
#[command(name = "ngm", version)]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores). NGM_THREADS wins
    /// over this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on a CSV file against a dependency graph.
    Train(TrainArgs),
    /// Complete unknown features of a partial assignment.
    Infer(InferArgs),
    /// Draw synthetic rows from a trained model.
    Sample(SampleArgs),
    /// Generate a Gaussian chain dataset with its precision matrix and graph.
    Synth(SynthArgs),
    /// Score how well a data table recovers a known graph.
    Eval(EvalArgs),
    /// Tabulate (and optionally plot) one feature's response to another.
    PlotDependency(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data, CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON; inferred from the data when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Edge list, or a `.csv` adjacency matrix.
    #[arg(long)]
    pub graph: PathBuf,
    /// Hidden width: a unit count (`30`) or a multiple of the input width (`2x`).
    #[arg(long)]
    pub hidden: Option<HiddenWidth>,
    /// Number of weight matrices in the core network.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs_init: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `fixed:<value>` or `adaptive`.
    #[arg(long)]
    pub lambda: Option<LambdaMode>,
    /// Penalty weight of the binned variant.
    #[arg(long)]
    pub binned_lambda: Option<LambdaMode>,
    /// Structure norm, `l1` or `l2`.
    #[arg(long)]
    pub norm: Option<NormKind>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub validation_split: Option<f64>,
    /// Bins per numeric feature for the binned variant.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow each feature's output to read its own input.
    #[arg(long)]
    pub self_dependency: bool,
    /// Skip the binned variant (numeric features then cannot be sampled).
    #[arg(long)]
    pub no_binned: bool,
    /// Wrap the core in per-feature encoder and decoder layers.
    #[arg(long)]
    pub projections: bool,
    /// Also fit an unconstrained model and report its losses.
    #[arg(long)]
    pub baseline: bool,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Observed values, `f1=0.5,f3=A`.
    #[arg(long, default_value = "")]
    pub known: String,
    /// Features to estimate, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub targets: Vec<String>,
    #[arg(long, value_enum, default_value_t = Method::Gradient)]
    pub method: Method,
    /// Also report each target's conditional distribution.
    #[arg(long)]
    pub distribution: bool,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// JSON output file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Gradient,
    Mp,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Graph used for orderings; derived from the model's mask when omitted.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Values fixed in every sample, `f1=v1,f2=v2`.
    #[arg(long, default_value = "")]
    pub preset: String,
    /// `bfs` or `topological`.
    #[arg(long, default_value = "bfs")]
    pub ordering: OrderingMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub nodes: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference graph (edge list or `.csv` adjacency).
    #[arg(long = "true")]
    pub truth: PathBuf,
    /// Data table to score, CSV with numeric columns.
    #[arg(long)]
    pub samples: PathBuf,
    /// Ridge added to the covariance; defaults to 1e-3 times its mean diagonal.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `target,neighbor`: the target's response as the neighbor varies.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub pair: Vec<String>,
    /// Curve CSV, optionally followed by `,file.svg`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub out: Vec<PathBuf>,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    /// Half-width of the neighbor grid in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    pub sigmas: f64,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<usize> {
    match std::env::var("NGM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| anyhow::Error::new(UserError(format!("NGM_THREADS must be a number, got `{v}`")))),
        Err(_) => Ok(flag.unwrap_or(0)),
    }
}

/// Error caused by the invocation rather than by the computation.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

/// 2 for numerical breakdowns inside the library, 1 for everything the
/// user can fix.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<NgmError>() {
            return match e {
                NgmError::NonFinite { .. } | NgmError::Divergence(_) | NgmError::Numerical(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Sample(a) => commands::sample(a),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::PlotDependency(a) => commands::plot_dependency(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
