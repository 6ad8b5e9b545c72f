//! `outage`: zone selection, simulation, training, detection, evaluation and
//! plot-data export for partially observable radial feeders.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for malformed input: bad flags, configs or data files.
const EXIT_VALIDATION: u8 = 1;
/// Exit status for failures while running.
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "outage",
    version,
    about = "Outage detection and localization on radial feeders"
)]
pub struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration file: a scenario for `simulate`, an experiment
    /// otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory that receives the command's output files.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select ordered outage-detection zones for a feeder.
    Zones {
        /// Topology document; the bundled 164-node feeder when absent.
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Generate a measurement series from a scenario config.
    Simulate {
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Train one calibrated model per zone on normal windows.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Score a measurement series with trained models and emit reports.
    Detect {
        #[command(flatten)]
        data: DataArgs,
        /// Directory holding the model checkpoints.
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Run the full experiment and write metrics and plot data.
    Eval {
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Turn an experiment artifact into a plot-ready file.
    Export {
        /// One of histogram, losscurve, delta-zeta.
        #[arg(long)]
        artifact: String,
        /// Experiment output directory; defaults to --out-dir.
        #[arg(long)]
        workspace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        zone: usize,
        #[arg(long, default_value = "medium")]
        case: String,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Output file; defaults to `<artifact>.csv` under --out-dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Measurement file written by `simulate`.
    #[arg(long)]
    pub measurements: PathBuf,
    /// Zone file written by `zones`.
    #[arg(long)]
    pub zones: PathBuf,
}

/// Overrides for the matching experiment-config fields.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Window length T in hourly steps.
    #[arg(long)]
    pub window: Option<usize>,
    /// Weight of the discriminator loss in the anomaly score.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Threshold factor h.
    #[arg(long)]
    pub h: Option<f64>,
    /// Learning rate alpha.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Minibatch size m.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Discriminator updates per generator update.
    #[arg(long)]
    pub n_d: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub min_iterations: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Validation(e)) => {
            log::error!("{e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(commands::Failure::Runtime(e)) => {
            log::error!("{e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
