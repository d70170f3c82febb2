//! Command-line surface and forecast service for yardcast.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod plot;
pub mod render;
pub mod server;

/// Problems with how the tool was invoked or configured (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "yardcast", version, about = "Hourly empty-container stock forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file: an event log for `ingest`, a stock series otherwise.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Timezone of zoneless timestamps in event logs.
    #[arg(long, global = true)]
    pub tz: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for reports and generated files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate a gate-event log into hourly stock series.
    Ingest {
        /// standard, special, reefer, unknown or all.
        #[arg(long, default_value = "standard")]
        category: String,
    },
    /// Stationarity tests and correlogram.
    Analyze {
        #[arg(long, default_value_t = 48)]
        lags: usize,
    },
    /// Rolling-origin cross-validation of one or more model families.
    Evaluate {
        /// Comma-separated families, or `all`.
        #[arg(long, default_value = "naive")]
        model: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Grid search ranked by cross-validated RMSE.
    Tune {
        #[arg(long)]
        model: String,
        /// `standard` or a TOML grid file.
        #[arg(long, default_value = "standard")]
        grid: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Only enumerate the grid.
        #[arg(long)]
        dry_run: bool,
    },
    /// Fit (or load) a model and forecast the next business days.
    Forecast {
        #[arg(long, default_value = "naive")]
        model: String,
        #[arg(long, default_value_t = 5)]
        days: usize,
        /// Use a saved artifact instead of fitting.
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// Where a freshly fitted artifact is saved; the configured artifact
        /// directory by default.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Serve forecasts from an artifact directory over HTTP.
    Serve {
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Generate a synthetic stock series or event log.
    Synth {
        /// `series` or `events`.
        #[arg(long, default_value = "series")]
        kind: String,
        #[arg(long)]
        start: Option<String>,
        #[arg(long)]
        end: Option<String>,
        /// Flat level with no cycles or noise.
        #[arg(long)]
        constant: Option<f64>,
        /// Mean dwell in hours for event logs.
        #[arg(long, default_value_t = 6.0)]
        dwell: f64,
    },
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 for usage and configuration errors, 2 for data and fit
/// errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                1
            } else {
                2
            }
        }
    }
}
