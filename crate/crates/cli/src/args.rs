use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use memometer::score::ProviderSpec;
use memometer::{GridKind, Method};

#[derive(Debug, Parser)]
#[command(name = "memometer", version, about = "Ease-of-reproduction analysis for VP diffusion models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Global seed; per-sample and Monte-Carlo seeds derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// `exact`, `bridge:stdio:<command>` or `bridge:tcp:<host:port>`.
    #[arg(long, global = true, default_value = "exact")]
    pub provider: ProviderSpec,

    /// Read/write timeout for tcp bridges, in seconds.
    #[arg(long, global = true)]
    pub bridge_timeout: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log volume growth of every target sample.
    Analyze(AnalyzeArgs),
    /// Cohort p-values over a grid of axis counts and sphere radii.
    Sweep(SweepArgs),
    /// Transport rings around 2-D samples and check they stay disjoint.
    Toy2d(ToyArgs),
    /// Monte-Carlo generation frequencies of the training samples.
    Oracle(OracleArgs),
    /// Top-k and bottom-k ids from a growth CSV.
    Rank(RankArgs),
    /// Two-sample t-test between two growth CSVs.
    Ttest(TtestArgs),
    /// Nearest-neighbour memorisation ratio of generated samples.
    Carlini(CarliniArgs),
    /// Split a dataset into kept and held-out parts.
    Split(SplitArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RangeArg {
    /// [-1, 1]
    Symmetric,
    /// [0, 1]
    Unit,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Pixel scaling for CIFAR-10 batches.
    #[arg(long, value_enum, default_value_t = RangeArg::Symmetric)]
    pub value_range: RangeArg,

    /// Add horizontally flipped copies of the training images.
    #[arg(long)]
    pub hflip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    UniformT,
    UniformM,
    LogM,
}

impl From<GridArg> for GridKind {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::UniformT => GridKind::UniformT,
            GridArg::UniformM => GridKind::UniformM,
            GridArg::LogM => GridKind::LogM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Euler,
    Heun,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Euler => Method::Euler,
            MethodArg::Heun => Method::Heun,
        }
    }
}

/// Overrides for `schedule.*`.
#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub beta_min: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long)]
    pub t_eps: Option<f64>,
    /// Diffusion steps T.
    #[arg(long)]
    pub num_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub grid_kind: Option<GridArg>,
}

/// Overrides for `growth.*` and `output.*`.
#[derive(Debug, Clone, Args)]
pub struct GrowthArgs {
    /// Frame axes N.
    #[arg(long)]
    pub num_axes: Option<usize>,
    /// Sphere radius σ.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Steps T' to follow.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// One axis, one step.
    #[arg(long)]
    pub cheap: bool,
    /// Keep only the K nearest mixture terms.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Steps to report, e.g. `1,10,100,1000`.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    /// Report every step.
    #[arg(long)]
    pub full_series: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Training data defining the exact score (CIFAR-10 `.bin` batches or one `.f32`).
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,
    /// Samples to measure; defaults to the training data.
    #[arg(long, num_args = 1..)]
    pub targets: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub growth: GrowthArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, num_args = 1..)]
    pub cohort_a: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub cohort_b: Vec<PathBuf>,
    /// Training data for the exact score; defaults to cohort A.
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,10,50,100")]
    pub axes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.05,0.1")]
    pub sigmas: Vec<f64>,
    /// Pooled-variance Student test instead of Welch.
    #[arg(long)]
    pub student: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub growth: GrowthArgs,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Samples on the unit circle.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub ring_points: Option<usize>,
    #[arg(long)]
    pub ring_radius: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Write every k-th knot (the last knot is always written).
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    /// Also render an SVG.
    #[arg(long)]
    pub svg: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,
    /// Monte-Carlo draws M.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Assign endpoints only within this distance of a sample.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Integrator for the Monte-Carlo draws.
    #[arg(long, value_enum)]
    pub mc_method: Option<MethodArg>,
    /// Also compute log l_T per sample and its rank correlation with the frequencies.
    #[arg(long)]
    pub with_growth: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub growth: GrowthArgs,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// A growth CSV written by `analyze`.
    #[arg(long)]
    pub growth: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Checkpoint step; defaults to the last column.
    #[arg(long)]
    pub at_step: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Column to compare; defaults to the last `log_l_*` column of each table.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub student: bool,
    /// Histogram bins for both cohorts.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct CarliniArgs {
    #[arg(long, num_args = 1..)]
    pub generated: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_neighbors: Option<usize>,
    /// Keep the candidate itself in the neighbour set.
    #[arg(long)]
    pub include_candidate: bool,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub held_out: usize,
    #[command(flatten)]
    pub range: DataArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Distribution {
    /// Uniform on [-1, 1]^D.
    Uniform,
    /// 0.5·N(0, I) clipped to [-1, 1].
    Gaussian,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Distribution::Uniform)]
    pub dist: Distribution,
    /// File name inside the output directory.
    #[arg(long, default_value = "data.f32")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}
