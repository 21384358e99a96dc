//! Batch front door for the occupation-kernel decomposition: turn trajectory
//! CSV files into a spectral model, then reconstruct states or export a
//! frequency spectrum from it. A `synth` subcommand manufactures test data.

// Negated float comparisons reject NaN; their inverted forms do not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use liouville_dmd::Error;

/// Exit code taxonomy: 0 success, 2 usage, 3 data, 4 numeric.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Parse { .. } | Error::StaleModel(_) => EXIT_DATA,
        Error::NumericRange(_)
        | Error::Divergence { .. }
        | Error::SingularGram(_)
        | Error::DegenerateEigenvector(_)
        | Error::DegenerateEigenbasis(_)
        | Error::Linalg(_) => EXIT_NUMERIC,
    }
}

#[derive(Parser)]
#[command(
    name = "ldmd",
    version,
    about = "Continuous-time dynamic mode decomposition over sampled trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a decomposition model from trajectory CSV files
    Decompose(DecomposeArgs),
    /// Evaluate a fitted model over a time grid
    Reconstruct(ReconstructArgs),
    /// Export the model's frequency spectrum at an initial condition
    Spectrum(SpectrumArgs),
    /// Generate synthetic trajectory files from a named system
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Expdot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuadratureArg {
    Auto,
    Simpson,
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    /// Descending |lambda|, conjugate partners adjacent
    Eigenvalue,
    /// Descending ||xi_i|| |phi_i(x0)|; requires --x0
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransposeArg {
    Plain,
    Conjugate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    /// One CSV per trajectory, header t,x1,...,xn
    PerFile,
    /// Single CSV with a leading traj_id column
    WithId,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Trajectory CSV file or directory of CSV files
    #[arg(long)]
    input: PathBuf,
    /// Output directory for model.json, eigenvalues.csv, modes.csv, run_meta.json
    #[arg(long)]
    out: PathBuf,
    /// TOML config file; command-line flags win over file values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Kernel width (divides the squared distance / dot product directly)
    #[arg(long)]
    mu: Option<f64>,
    /// Endpoint scaling a in (0, 1]; 1 = unscaled generator
    #[arg(long = "scale-a")]
    scale_a: Option<f64>,
    /// Relative Tikhonov regularization of the Gram solve
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    quadrature: Option<QuadratureArg>,
    /// Split each trajectory into windows of this many samples
    #[arg(long)]
    segment_len: Option<usize>,
    /// Window stride; defaults to the segment length (non-overlapping)
    #[arg(long)]
    segment_stride: Option<usize>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    #[arg(long, value_enum)]
    modes_transpose: Option<TransposeArg>,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    /// Initial condition, comma-separated; required for --order energy
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Path to a model.json written by `decompose`
    #[arg(long)]
    model: PathBuf,
    /// Initial condition, comma-separated (e.g. "1.0,0.0")
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Vec<f64>,
    /// Time grid as start:stop:count with count >= 2 (e.g. "0:1:201")
    #[arg(long)]
    t_grid: String,
    /// Trajectory data location; defaults to the path recorded in the model
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for reconstruction.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Path to a model.json written by `decompose`
    #[arg(long)]
    model: PathBuf,
    /// Initial condition, comma-separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Vec<f64>,
    /// Write log10 magnitudes (floored at 1e-12)
    #[arg(long)]
    log: bool,
    /// Trajectory data location; defaults to the path recorded in the model
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for spectrum.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    /// Circular oscillator dx/dt = (y, -x)
    Oscillator,
    /// Two decoupled decays dx/dt = (-x, -2y)
    Decay,
    /// Van der Pol oscillator with damping 1
    Vdp,
    /// Scalar sinusoid with random phase (see --freq, --noise)
    Sine,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    system: SystemArg,
    /// Number of trajectory files to write
    #[arg(long)]
    count: usize,
    /// Duration of each trajectory
    #[arg(long, default_value_t = 1.0)]
    t_final: f64,
    /// Sampling step
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// RNG seed; fixed seeds give byte-identical files
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Sinusoid frequency in Hz (sine system only)
    #[arg(long, default_value_t = 12.0)]
    freq: f64,
    /// Standard deviation of additive Gaussian noise (sine system only)
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

fn main() -> ExitCode {
    // Pin BLAS threading so eigenvalue output is byte-identical across
    // machines and worker counts.
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decompose(args) => commands::decompose(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Spectrum(args) => commands::spectrum(args),
        Command::Synth(args) => commands::synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
