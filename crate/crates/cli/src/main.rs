mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::StateKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] qcnet::Error),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use qcnet::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(..) | CliError::Csv(_) => 4,
            CliError::Check(_) => 3,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(E::Io(_) | E::Format(_)) => 4,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Exact,
    Qcnn,
    Qctn,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Qcnn,
    Qctn,
    Vanilla,
}

#[derive(Debug, Parser)]
#[command(name = "qcnet", version, about = "Two-photon circuit simulation, surrogate training and phase estimation")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a Haar-random interferometer and write it as QCU1.
    GenUnitary {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labelled dataset (QCDS1) and its interferometer (QCU1).
    GenDataset {
        /// Run configuration; flags below override its `[data]` and `[paths]` keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n_ps: Option<usize>,
        #[arg(long)]
        n_label: Option<usize>,
        #[arg(long, value_enum)]
        state: Option<StateKind>,
        /// Detections per label; exact labels when absent.
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        unitary_seed: Option<u64>,
        /// Seed for the phase settings and sampled labels.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        unitary_out: Option<PathBuf>,
    },
    /// Train a surrogate on the configured dataset.
    Train {
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the configured checkpoint and its optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Recover phases from observed counts by gradient descent.
    Estimate {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long, required_if_eq("model", "exact"))]
        unitary: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "weak")]
        state: StateKind,
        /// Phase shifter count for the exact model (default: min(d, 6)).
        #[arg(long)]
        n_ps: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Start point of the first restart.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
        /// Known phases; prints residuals when given.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        truth: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repeat estimation against fresh observations and summarize residuals.
    BatchEstimate {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long, required_if_eq("model", "exact"))]
        unitary: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "weak")]
        state: StateKind,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        truth: Vec<f64>,
        /// Detections per observation; exact observations when absent.
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Per-iteration summary CSV.
        #[arg(long)]
        out: PathBuf,
        /// Final residual of every trial and phase.
        #[arg(long)]
        residuals_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Schmidt-spectrum statistics over Haar draws, one CSV row per dimension.
    SchmidtStats {
        #[arg(long, value_enum)]
        state: StateKind,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long, default_value_t = 0.9)]
        q: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate detections of the exact model and write QCOB1 counts.
    Sample {
        #[arg(long)]
        unitary: PathBuf,
        #[arg(long, value_enum, default_value = "weak")]
        state: StateKind,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two-photon matrix evolution with permanent probabilities.
    PermCheck {
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Print the header of a QCU1, QCDS1, QCKP1 or QCOB1 file.
    Inspect {
        path: PathBuf,
        /// Accepted for uniformity; unused.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    commands::dispatch(cli.command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
