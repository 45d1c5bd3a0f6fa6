use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use occbound::losses::MultiTaskParams;
use occbound::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "occbound", version, about = "Occlusion boundary pipeline")]
pub struct Cli {
    /// Print the resolved configuration of the subcommand and exit.
    #[arg(long, global = true)]
    pub show_config: bool,

    /// Also write an SVG plot next to each curve CSV.
    #[arg(long, global = true)]
    pub svg: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic occlusion dataset.
    Synth(SynthArgs),
    /// Train a network and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Run a checkpoint over a manifest.
    Predict(PredictArgs),
    /// Thin a boundary map by non-maximum suppression.
    Nms(NmsArgs),
    /// Replace predicted orientations by local tangents.
    Adjust(AdjustArgs),
    /// Benchmark predictions against ground truth.
    Eval(EvalArgs),
    /// Check loss derivatives and export loss curves.
    Losscheck(LosscheckArgs),
    /// Grid search over attention loss beta and gamma.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub shapes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives the maps and `manifest.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Cce,
    Focal,
    Attention,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    Random,
    Never,
    Always,
}

/// Training hyper-parameters shared by `train` and `sweep`.
#[derive(Args, Debug, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = MultiTaskParams::default().sigma())]
    pub sigma: f64,
    #[arg(long, default_value_t = MultiTaskParams::default().lambda())]
    pub lambda: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().crop)]
    pub crop: usize,
    #[arg(long, default_value_t = TrainConfig::default().iters)]
    pub iters: usize,
    /// Batches accumulated per update.
    #[arg(long, default_value_t = 1)]
    pub iter_size: usize,
    #[arg(long, value_enum, default_value_t = Flip::Random)]
    pub flip: Flip,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = LossKind::Attention)]
    pub loss: LossKind,
    /// Attention loss base.
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Modulation exponent; defaults to 0.5 for attention and 2 for focal.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Focal loss positive weight.
    #[arg(long, default_value_t = 0.25)]
    pub focal_alpha: f64,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Loss history CSV; defaults to the checkpoint path with a `.csv`
    /// extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; receives per-record maps and `manifest.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct NmsOpts {
    #[arg(long, default_value_t = 4)]
    pub radius: usize,
    #[arg(long, default_value_t = 1.01)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub border: usize,
}

#[derive(Args, Debug)]
pub struct NmsArgs {
    /// Boundary map to thin.
    #[arg(long = "in", required_unless_present = "manifest", conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Thin every boundary map of a prediction manifest instead.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output map, or output directory with `--manifest`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: NmsOpts,
}

#[derive(Args, Debug)]
pub struct AdjustArgs {
    /// Thinned boundary map.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest", requires = "orient")]
    pub boundary: Option<PathBuf>,
    /// Predicted orientation map.
    #[arg(long, conflicts_with = "manifest")]
    pub orient: Option<PathBuf>,
    /// Adjust every record of a thinned prediction manifest instead.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output map, or output directory with `--manifest`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = occbound::trainer::ADJUST_RADIUS)]
    pub radius: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_manifest: PathBuf,
    #[arg(long)]
    pub gt_manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Match distance as a fraction of the image diagonal.
    #[arg(long, default_value_t = 0.0075)]
    pub dmax_frac: f64,
    /// Orientation tolerance in radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub orient_tol: f64,
    /// Exit with code 3 when ODS falls below this value.
    #[arg(long)]
    pub min_ods: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LosscheckArgs {
    /// Probability grid points per branch.
    #[arg(long, default_value_t = 99)]
    pub grid: usize,
    /// Class-balance weight used for the checks and curves.
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
    /// Curve CSV directory; nothing is written without it.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Training manifest; its last fifth is held out for scoring.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.5,0.7")]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}
