//! `gpgl`: grid layouts, tensor export, MSM-CNN training and benchmarks.

mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpgl_core::layout::Optimizer;
use gpgl_core::{FeatureMode, LayoutParams, MergeRule};
use msm_cnn::GlobalPool;

#[derive(Parser, Debug)]
#[command(name = "gpgl", version, about = "Graph-preserving grid layouts and multi-scale maxout CNNs")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "GPGL_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One grid layout per graph.
    Layout(LayoutCmd),
    /// `k` grid layouts per graph from consecutive seeds.
    Augment(AugmentCmd),
    /// Augmented layouts as a tensor container plus manifest.
    Export(ExportCmd),
    /// Corpus statistics.
    Stats(StatsCmd),
    /// One SVG per layout.
    Render(RenderCmd),
    /// Cross-validated MSM-CNN training on an exported tensor directory.
    Train(TrainCmd),
    /// Mean layout time per graph and inference time per tensor.
    Bench(BenchCmd),
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// TUDataset name (looked up in $GPGL_DATA_DIR, then ./data) or directory.
    #[arg(long)]
    pub dataset: String,
    /// Only the first N graphs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct LayoutArgs {
    #[arg(long, default_value_t = 1.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Zoom the stress solution before the regularized solve.
    #[arg(long)]
    pub rescale: bool,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// lbfgs or gd.
    #[arg(long, default_value = "lbfgs", value_parser = parse_optimizer)]
    pub optimizer: Optimizer,
}

impl LayoutArgs {
    pub fn params(&self) -> anyhow::Result<LayoutParams> {
        let p = LayoutParams {
            alpha: self.alpha,
            lambda: self.lambda,
            gamma: self.gamma,
            enable_rescale: self.rescale,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            seed: self.seed,
            optimizer: self.optimizer,
        };
        p.validate()?;
        Ok(p)
    }
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    match s {
        "lbfgs" | "l-bfgs" => Ok(Optimizer::Lbfgs),
        "gd" | "gradient-descent" => Ok(Optimizer::GradientDescent),
        other => Err(format!("unknown optimizer `{other}`")),
    }
}

#[derive(Args, Debug, Clone)]
pub struct TensorArgs {
    /// Square window side in cells.
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    /// average or max.
    #[arg(long, default_value = "average")]
    pub merge: MergeRule,
    /// auto, label or degree.
    #[arg(long, default_value = "auto")]
    pub features: FeatureMode,
}

#[derive(Args, Debug)]
pub struct LayoutCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub tensor: TensorArgs,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// auto, label or degree.
    #[arg(long, default_value = "auto")]
    pub features: FeatureMode,
    /// Also write the statistics here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Graph ids to render (all when omitted).
    #[arg(long, value_delimiter = ',')]
    pub graphs: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    /// Directory written by `export`.
    #[arg(long)]
    pub tensors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// MSM-Conv widths.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    pub channels: Vec<usize>,
    /// Hidden fully connected widths.
    #[arg(long, value_delimiter = ',', default_value = "256,128")]
    pub fc: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    /// max or mean.
    #[arg(long, default_value = "max")]
    pub global_pool: GlobalPool,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write each fold's best model as `fold<k>.ckpt`.
    #[arg(long)]
    pub checkpoints: bool,
}

#[derive(Args, Debug)]
pub struct BenchCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub tensor: TensorArgs,
    /// Tensors pushed through the standard network for the inference timing.
    #[arg(long, default_value_t = 8)]
    pub inference_samples: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail(&e.to_string()),
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            return fail(&e.to_string());
        }
    }
    let result = match cli.command {
        Command::Layout(c) => commands::layout(c),
        Command::Augment(c) => commands::augment(c),
        Command::Export(c) => commands::export(c),
        Command::Stats(c) => commands::stats(c),
        Command::Render(c) => commands::render(c),
        Command::Train(c) => commands::train(c),
        Command::Bench(c) => commands::bench(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&format!("{e:#}")),
    }
}

fn fail(message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": message.trim_end() }));
    ExitCode::FAILURE
}
