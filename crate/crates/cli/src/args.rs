use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sfmp_core::{QuantileScope, ReorderChoice, ReorderMode};

#[derive(Debug, Parser)]
#[command(name = "sfmp", version, about = "Search-free mixed-precision weight quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Allocate bits, quantize and pack weight matrices.
    Quantize(QuantizeArgs),
    /// Compare the LUT GEMV of packed models against a dense reference.
    Verify(VerifyArgs),
    /// Time the LUT GEMV on packed or synthetic models; writes CSV.
    Bench(BenchArgs),
    /// Summarize packed models.
    Inspect(InspectArgs),
    /// Write a seeded synthetic manifest with weights and gradients.
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReorderArg {
    Auto,
    None,
    Row,
    Col,
    Rowcol,
}

impl From<ReorderArg> for ReorderChoice {
    fn from(r: ReorderArg) -> Self {
        match r {
            ReorderArg::Auto => Self::Auto,
            ReorderArg::None => Self::Fixed(ReorderMode::None),
            ReorderArg::Row => Self::Fixed(ReorderMode::Row),
            ReorderArg::Col => Self::Fixed(ReorderMode::Col),
            ReorderArg::Rowcol => Self::Fixed(ReorderMode::RowCol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Global,
    PerMatrix,
}

impl From<ScopeArg> for QuantileScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Global => Self::Global,
            ScopeArg::PerMatrix => Self::PerMatrix,
        }
    }
}

/// Where the weights and calibration gradients come from.
#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct InputArgs {
    /// JSON manifest listing `name`, `weights` and `gradients` per matrix.
    #[arg(long, conflicts_with_all = ["weights", "synthetic"])]
    pub manifest: Option<PathBuf>,
    /// Single SFMPMAT0 weight file (needs --calib-grads).
    #[arg(long, requires = "calib_grads", conflicts_with = "synthetic")]
    pub weights: Option<PathBuf>,
    /// Gradient stream file or directory of SFMPMAT0 gradient samples.
    #[arg(long, requires = "weights")]
    pub calib_grads: Option<PathBuf>,
    /// Generate inputs in memory from `[name:]MxN` shapes.
    #[arg(long, value_delimiter = ',')]
    pub synthetic: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Total bits per weight, including scale and zero-point storage.
    #[arg(long, conflicts_with = "bits")]
    pub bpw: Option<f64>,
    /// Bits per weight spent on codes only.
    #[arg(long)]
    pub bits: Option<f64>,
    /// Block width n_b; also the quantization group length.
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    /// Block height m_b.
    #[arg(long, default_value_t = 256)]
    pub block_rows: usize,
    #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
    pub quantile_scope: ScopeArg,
    /// Scale bits charged per group in the budget.
    #[arg(long, default_value_t = 16)]
    pub scale_bits: u32,
    /// Zero-point bits charged per group in the budget.
    #[arg(long, default_value_t = 16)]
    pub zero_bits: u32,
    #[arg(long, value_enum, default_value_t = ReorderArg::Auto)]
    pub reorder: ReorderArg,
    /// Zero-pad edge blocks of matrices that do not divide into blocks.
    #[arg(long)]
    pub pad: bool,
    /// Output directory, or a `.sfmp` file when there is one matrix.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Gradient samples per synthetic matrix.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Packed model file.
    #[arg(long, requires = "weights", conflicts_with = "manifest")]
    pub model: Option<PathBuf>,
    /// Original SFMPMAT0 weights of --model.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Manifest whose matrices were quantized into --models.
    #[arg(long, requires = "models")]
    pub manifest: Option<PathBuf>,
    /// Directory holding `<name>.sfmp` for every manifest entry.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Largest accepted relative L2 error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Random activations per model; the first is the zero vector.
    #[arg(long, default_value_t = 8)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Packed model files to time.
    #[arg(long, conflicts_with_all = ["shape", "bits"])]
    pub model: Vec<PathBuf>,
    /// Synthetic shapes `MxN`, or the presets `q_proj` / `down_proj`.
    #[arg(long, value_delimiter = ',', default_value = "4096x4096")]
    pub shape: Vec<String>,
    /// Bit-widths to time; fractional values mix floor and ceil blocks.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub bits: Vec<f64>,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    #[arg(long, default_value_t = 256)]
    pub block_rows: usize,
    /// Give synthetic models random row and column permutations.
    #[arg(long)]
    pub reorder: bool,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the dequantize-then-multiply baseline row.
    #[arg(long)]
    pub no_baseline: bool,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InspectFormat {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Packed model files, or directories of them.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = InspectFormat::Text)]
    pub format: InspectFormat,
    /// Per-block bit-widths as CSV (one model only).
    #[arg(long)]
    pub blocks: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenFixtureArgs {
    /// Output directory; receives `manifest.json` and the matrix files.
    #[arg(long)]
    pub out: PathBuf,
    /// Matrix shapes as `[name:]MxN`.
    #[arg(long, value_delimiter = ',', default_value = "512x256")]
    pub shapes: Vec<String>,
    /// Gradient samples per matrix.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
