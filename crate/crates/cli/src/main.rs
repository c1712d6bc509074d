mod commands;
mod lr_grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use completep::Error;

#[derive(Parser, Debug)]
#[command(name = "completep", version, about = "Width/depth parameterizations, diagnostics and scaling tools")]
struct Cli {
    /// Seed for every random draw in the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location. A directory for most commands; `plan` also accepts a `.json` file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent jobs for sweeps.
    #[arg(long, global = true, env = "COMPLETEP_JOBS", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolve a scaling plan and optionally diff it against another.
    Plan(PlanArgs),
    /// Train from a JSON run config, or sweep base learning rates.
    Train(TrainArgs),
    /// Residual-stream norms across depths for the first training steps.
    Coordcheck(CoordArgs),
    /// Linearization distance of one block after a single update.
    Laziness(LazinessArgs),
    /// One-step residual change of the ReLU toy network across depths.
    Maxupdate(MaxUpdateArgs),
    /// Infinite-width signal-propagation recursion.
    Sigprop(SigpropArgs),
    /// Fit a power law to (flops, loss) points.
    Fit(FitArgs),
    /// N:L shapes at a fixed non-embedding parameter count.
    Grid(GridArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum KindArg {
    Sp,
    Mup,
    Completep,
    DepthAlpha,
}

#[derive(Args, Debug)]
struct BaseArgs {
    #[arg(id = "base_sigma", long = "base-sigma", default_value_t = 0.02)]
    sigma: f64,
    #[arg(id = "base_eta", long = "base-eta", default_value_t = 0.0039)]
    eta: f64,
    #[arg(id = "base_lambda", long = "base-lambda", default_value_t = 0.0)]
    lambda: f64,
    #[arg(id = "base_eps", long = "base-eps", default_value_t = 1e-16)]
    eps: f64,
    #[arg(id = "base_n", long = "base-n", default_value_t = 256)]
    n: usize,
    #[arg(id = "base_l", long = "base-l", default_value_t = 2)]
    l: usize,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Branch exponent; required for depth_alpha, defaults to 1 for completep.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    l: usize,
    #[command(flatten)]
    base: BaseArgs,
    #[arg(long, default_value_t = 64)]
    d_head: usize,
    #[arg(long, value_enum, default_value_t = AttnScaleArg::InvHeadDim)]
    attn_scale: AttnScaleArg,
    /// Keep LayerNorm and bias learning rates depth-independent.
    #[arg(long)]
    no_ln_bias_correction: bool,
    /// Plan JSON to compare against, field by field.
    #[arg(long)]
    diff: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[allow(clippy::enum_variant_names)]
enum AttnScaleArg {
    InvHeadDim,
    InvSqrtHeadDim,
    InvWidth,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config JSON.
    config: PathBuf,
    /// Sweep η_base over powers of two, e.g. `2^-12..2^-4`.
    #[arg(long)]
    lr_grid: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum CoordVariantArg {
    Sp,
    AlphaHalfUncorrected,
    AlphaHalf,
    Completep,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct CoordArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32, 64])]
    depths: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    variants: Vec<CoordVariantArg>,
    #[arg(long, default_value_t = 10)]
    steps: u64,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    d_head: usize,
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0.06)]
    sigma: f64,
    #[arg(long, default_value_t = 2e-3)]
    eta: f64,
    #[arg(id = "base_l", long = "base-l", default_value_t = 2)]
    base_l: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum UpdateArg {
    Both,
    W2,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum RuleArg {
    Sign,
    Gradient,
}

#[derive(Args, Debug)]
struct LazinessArgs {
    /// Branch exponents to run; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Include the unscaled muP network.
    #[arg(long)]
    mup: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128, 256, 512])]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[arg(long, default_value_t = 1e-4)]
    eta0: f64,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Block whose update is measured.
    #[arg(long, default_value_t = 4)]
    layer: usize,
    #[arg(long, value_enum, default_value_t = UpdateArg::Both)]
    update: UpdateArg,
    #[arg(long, value_enum, default_value_t = RuleArg::Sign)]
    rule: RuleArg,
}

#[derive(Args, Debug)]
struct MaxUpdateArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 32, 128])]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 4)]
    seeds: usize,
    /// Use muP learning rates (no depth factor).
    #[arg(long)]
    depth_unaware: bool,
    #[arg(long)]
    with_bias: bool,
    #[arg(long)]
    no_bias_correction: bool,
}

#[derive(Args, Debug)]
struct SigpropArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    sigma2: f64,
    #[arg(long)]
    l: usize,
    #[arg(long, default_value_t = 1.0)]
    h0: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with a header and `flops,loss` columns.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Target non-embedding parameter count.
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    d_head: usize,
    #[arg(long, default_value_t = completep::scaling::DEFAULT_VOCAB)]
    vocab: usize,
    #[arg(long, default_value_t = completep::scaling::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long, default_value_t = completep::scaling::DEFAULT_TPP)]
    tpp: f64,
}

/// Usage errors carry the flag they refer to.
#[derive(Debug, thiserror::Error)]
#[error("{flag}: {message}")]
struct UsageError {
    flag: &'static str,
    message: String,
}

fn usage(flag: &'static str, message: impl Into<String>) -> anyhow::Error {
    UsageError { flag, message: message.into() }.into()
}

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite { .. } => EXIT_NUMERIC,
                Error::Io(_) | Error::Checkpoint { .. } => EXIT_IO,
                Error::Csv(c) if c.is_io_error() => EXIT_IO,
                _ => EXIT_USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { EXIT_IO } else { EXIT_USAGE };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
