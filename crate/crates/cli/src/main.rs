//! `pairsim` command-line entry point.
//!
//! Exit codes: 0 success, 1 computation or I/O failure, 2 usage or
//! configuration error. Failures print a JSON error record on stderr.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "pairsim", version, about = "Microring photon-pair source simulation and time-tag analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Device configuration (TOML).
    #[arg(long, global = true)]
    pub device: Option<PathBuf>,
    /// Source configuration (TOML).
    #[arg(long, global = true)]
    pub source: Option<PathBuf>,
    /// Detection-chain configuration (TOML).
    #[arg(long, global = true)]
    pub chain: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for parallel stages; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory for outputs and the manifest.
    #[arg(long, global = true, env = "PAIRSIM_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Through-port spectrum of the device around the pump wavelength.
    SimulateSpectrum {
        #[arg(long, default_value_t = 1543.0)]
        center_nm: f64,
        #[arg(long, default_value_t = 1000.0)]
        span_ghz: f64,
        #[arg(long, default_value_t = 200_001)]
        points: usize,
    },
    /// Joint temporal amplitude of the configured source.
    SimulateJta {
        /// Alias for the global `--source`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schmidt decomposition of a stored joint amplitude.
    AnalyzeJta {
        #[arg(long = "in")]
        input: PathBuf,
        /// Bootstrap replicas for the error of the intensity-based purity (0 disables).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        /// Coincidence total assumed for the bootstrap.
        #[arg(long, default_value_t = 100_000)]
        counts: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Monte Carlo time tags for the configured source and detection chain.
    GenerateTags {
        #[arg(long)]
        pulses: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coincidence histogram, rates and derived metrics of a time-tag file.
    AnalyzeTags {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        bin_ps: f64,
        #[arg(long, default_value_t = -120.0)]
        origin_ps: f64,
        #[arg(long, value_enum, ignore_case = true, default_value_t = RegionArg::D)]
        region: RegionArg,
        /// Resonance lifetime bounding region D; read from the file metadata by default.
        #[arg(long)]
        lifetime_ps: Option<f64>,
        /// Detector efficiency; read from the file metadata by default.
        #[arg(long)]
        eta_d: Option<f64>,
        /// Idler-path transmittivity; read from the file metadata by default.
        #[arg(long)]
        t_i: Option<f64>,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit of click probability versus pump power.
    FitPower {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        eta_s: f64,
        #[arg(long)]
        eta_i: f64,
        #[arg(long, value_enum, default_value_t = ModelArg::Threshold)]
        model: ModelArg,
        /// Power at which mean photon numbers and g2 are reported.
        #[arg(long)]
        reference_power: Option<f64>,
        /// Purity of the squeezed contribution used in the g2 prediction.
        #[arg(long, default_value_t = 1.0)]
        mode_purity: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Collects metrics from earlier reports (and optionally a source simulation) into one document.
    Report {
        #[arg(long = "inputs", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionArg {
    A,
    B,
    C,
    D,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArg {
    Threshold,
    Literal,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    commands::dispatch(&cli.global, cli.command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.to_string());
            eprintln!("{}", err.record());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
