//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "freqshot", version, about = "Frequency-guided cross-domain few-shot learning toolkit")]
pub struct Cli {
    /// Worker threads for evaluation (1 is fully deterministic).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic cross-domain benchmark to disk.
    GenData(GenDataArgs),
    /// Write low-frequency-replaced pseudo-source episodes.
    Augment(AugmentArgs),
    /// Split one image into low-only and high-only reconstructions.
    Decompose(DecomposeArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on sampled few-shot tasks.
    Eval(EvalArgs),
    /// Accuracy on low-only and high-only copies of tasks.
    Probe(ProbeArgs),
    /// Feature-space MMD between two splits.
    Mmd(MmdArgs),
    /// Train and evaluate a grid of module configurations over seeds.
    Ablate(AblateArgs),
    /// Export learned frequency filter maps of a checkpoint.
    ExportFilters(ExportFiltersArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Lfr,
    Hfr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Proto,
    Gnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Source,
    TargetTrain,
    TargetTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    Sum,
    Mean,
}

/// Where images come from: a manifest, or the synthetic benchmark in memory.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic benchmark config JSON, used when `--data` is absent.
    #[arg(long, conflicts_with = "data")]
    pub synth_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Base config JSON; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub source_classes: Option<usize>,
    #[arg(long)]
    pub source_images: Option<usize>,
    #[arg(long)]
    pub target_train_classes: Option<usize>,
    #[arg(long)]
    pub target_train_images: Option<usize>,
    #[arg(long)]
    pub target_test_classes: Option<usize>,
    #[arg(long)]
    pub target_test_images: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

/// Replacement-radius distribution flags.
#[derive(Debug, Args)]
pub struct GammaArgs {
    /// Fixed γ.
    #[arg(long, conflicts_with = "gamma_range")]
    pub gamma: Option<f64>,
    /// γ drawn uniformly from `[A, B]`.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub gamma_range: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub src_manifest: PathBuf,
    #[arg(long)]
    pub tar_manifest: PathBuf,
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[arg(long, value_enum, default_value = "lfr")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long, default_value_t = 5)]
    pub n_way: usize,
    #[arg(long, default_value_t = 1)]
    pub k_shot: usize,
    #[arg(long, default_value_t = 4)]
    pub m_query: usize,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Low band radius as a fraction of `min(H, W)`.
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Experiment settings; each flag overrides the `--config` file.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON (model, train and eval sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub m_query: Option<usize>,
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    #[arg(long, value_enum)]
    pub reduction: Option<ReductionArg>,
    /// Comma-separated channels of the four blocks.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Pseudo-task loss on or off.
    #[arg(long)]
    pub lfr: Option<bool>,
    #[arg(long)]
    pub hfe: Option<bool>,
    #[arg(long)]
    pub gff: Option<bool>,
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub n_tasks: Option<usize>,
    #[arg(long)]
    pub eval_m_query: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Run directory (config.json, metrics.csv, checkpoints/, analysis/).
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Also evaluate on the target test split after training.
    #[arg(long)]
    pub eval: bool,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, value_enum, default_value = "target-test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 1000)]
    pub n_tasks: usize,
    #[arg(long, default_value_t = 1)]
    pub k_shot: usize,
    #[arg(long, default_value_t = 16)]
    pub m_query: usize,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, value_enum, default_value = "source")]
    pub split: SplitArg,
    /// Low band radius as a fraction of `min(H, W)`.
    #[arg(long)]
    pub gamma_probe: f64,
    #[arg(long, default_value_t = 200)]
    pub n_tasks: usize,
    #[arg(long, default_value_t = 1)]
    pub k_shot: usize,
    #[arg(long, default_value_t = 16)]
    pub m_query: usize,
}

#[derive(Debug, Args)]
pub struct MmdArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, value_enum, default_value = "source")]
    pub split_a: SplitArg,
    #[arg(long, value_enum, default_value = "target-test")]
    pub split_b: SplitArg,
    /// Images sampled from each split.
    #[arg(long, default_value_t = 300)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Grid JSON (a list of config deltas), or `standard` for the built-in module grid.
    #[arg(long, default_value = "standard")]
    pub grid: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportFiltersArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
