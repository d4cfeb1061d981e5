use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mvseg", version, about = "Multi-view cardiac segmentation with cross-view priors")]
pub struct Cli {
    /// Case-level worker threads (overrides the config).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Master seed (dataset seed for phantom-gen, stage seeds for train).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Pipeline configuration JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    PhantomGen(PhantomGenArgs),
    /// Project a segmentation from its image grid onto another image grid.
    Project(ProjectArgs),
    /// Crop an image to the bounding box of one or more priors.
    Crop(CropArgs),
    /// Undo a crop using its record.
    Restore(RestoreArgs),
    /// Train the three pipeline networks (or the full ablation grid).
    Train(TrainArgs),
    /// Segment cases with a trained run.
    Infer(InferArgs),
    /// Score a trained run against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PhantomGenArgs {
    /// Number of cases.
    #[arg(short = 'n', long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,

    #[arg(short, long)]
    pub out: PathBuf,

    /// Base phantom parameters as JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,

    /// Generate every case from the base parameters without jitter.
    #[arg(long)]
    pub no_jitter: bool,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Segmentation on the grid of `--src`.
    #[arg(long)]
    pub seg: PathBuf,

    /// Image whose grid the segmentation lives on.
    #[arg(long)]
    pub src: PathBuf,

    /// Image whose grid receives the projection.
    #[arg(long)]
    pub dst: PathBuf,

    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long)]
    pub image: PathBuf,

    /// Prior label maps on the image grid; the box covers their union.
    #[arg(long, required = true, num_args = 1..)]
    pub prior: Vec<PathBuf>,

    /// Margin in voxels around the prior box.
    #[arg(long, default_value_t = mvseg_core::hlc::DEFAULT_MARGIN)]
    pub margin: usize,

    /// Cropped image path.
    #[arg(short, long)]
    pub out: PathBuf,

    /// Crop record path (default: next to the output, `.crop.json`).
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    /// Image on the cropped grid.
    #[arg(long)]
    pub image: PathBuf,

    #[arg(long)]
    pub record: PathBuf,

    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with a manifest.
    #[arg(long)]
    pub data: PathBuf,

    /// Run directory to create.
    #[arg(short, long)]
    pub out: PathBuf,

    /// Number of leading cases used for training (default: all but a fifth).
    #[arg(long)]
    pub train_cases: Option<usize>,

    /// Also train every ablation variant.
    #[arg(long)]
    pub ablation: bool,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub iters_per_epoch: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Disable data augmentation.
    #[arg(long)]
    pub no_augment: bool,

    /// Build stage-2/3 training priors from ground truth.
    #[arg(long)]
    pub teacher_forcing: bool,
}

#[derive(Debug, Args)]
pub struct CaseSelection {
    /// Dataset directory (default: the run's training dataset).
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Case ids to use (default: every case not used for training).
    #[arg(long, num_args = 1..)]
    pub cases: Vec<String>,

    /// Use every case in the dataset.
    #[arg(long, conflicts_with = "cases")]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub run: PathBuf,

    #[command(flatten)]
    pub select: CaseSelection,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,

    #[command(flatten)]
    pub select: CaseSelection,

    /// Report every ablation row instead of the full pipeline only.
    #[arg(long)]
    pub ablation: bool,
}
