use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "idid", version, about = "Instrumented difference-in-differences estimation")]
pub struct Cli {
    /// Maximum worker threads for bootstrap and simulation (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wald and semiparametric estimates from microdata.
    Estimate(EstimateArgs),
    /// Two-sample Wald estimate from outcome and exposure summaries.
    TwoSample(TwoSampleArgs),
    /// Weak-identification diagnostic.
    WeakId(WeakIdArgs),
    /// Sensitivity band for drift in the exposure effect over time.
    Sensitivity(SensitivityArgs),
    /// Monte Carlo study from a TOML scenario config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ColumnArgs {
    #[arg(long, default_value = "t")]
    pub t_col: String,
    #[arg(long, default_value = "z")]
    pub z_col: String,
    #[arg(long, default_value = "d")]
    pub d_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Comma-separated covariate columns; defaults to every remaining column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Ignore all covariate columns.
    #[arg(long, conflicts_with = "covariates")]
    pub no_covariates: bool,
    /// Column identifying units for block bootstrap.
    #[arg(long)]
    pub unit_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkingModelArg {
    Constant,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeArg {
    PlugIn,
    Bootstrap,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long, value_enum, default_value_t = WorkingModelArg::Constant)]
    pub working_model: WorkingModelArg,
    /// Outcome mean design, e.g. `full_interactions` or `exp_half:full_interactions`.
    #[arg(long, default_value = "full_interactions")]
    pub mu_y: String,
    #[arg(long, default_value = "full_interactions")]
    pub mu_d: String,
    #[arg(long, default_value = "logistic_propensity")]
    pub pi: String,
    /// Clamp fitted propensities to [eps, 1 - eps].
    #[arg(long)]
    pub pi_clamp: Option<f64>,
    #[arg(long, value_enum, default_value_t = SeArg::PlugIn)]
    pub se: SeArg,
    #[arg(long, default_value_t = 200)]
    pub bootstrap_replications: usize,
    /// Resample whole units (requires --unit-id).
    #[arg(long)]
    pub block: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TwoSampleArgs {
    #[arg(long)]
    pub outcome: PathBuf,
    #[arg(long)]
    pub exposure: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeakIdArgs {
    #[arg(long, conflicts_with = "exposure", required_unless_present = "exposure")]
    pub data: Option<PathBuf>,
    /// Exposure summary file (t,z,mean,se,n).
    #[arg(long)]
    pub exposure: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Time0,
    Time1,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long, conflicts_with_all = ["outcome", "exposure"], required_unless_present_all = ["outcome", "exposure"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "exposure")]
    pub outcome: Option<PathBuf>,
    #[arg(long, requires = "outcome")]
    pub exposure: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_lower: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_upper: f64,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[arg(long, value_enum, default_value_t = TargetArg::Time0)]
    pub target: TargetArg,
    /// Band as CSV (delta, estimate, ci_low, ci_high).
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides any seed in the config.
    #[arg(long)]
    pub seed: u64,
    /// n = 100000 with 1000 replications.
    #[arg(long)]
    pub full_scale: bool,
    /// Table rows as CSV.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Validation errors exit with 1, estimation failures with 2.
fn exit_code(err: &idid::Error) -> u8 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

pub fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> idid::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| idid::Error::Io(e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| idid::Error::Io(format!("{}: {e}", path.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(idid::Error::from),
    }
}

pub fn create(path: &Path) -> idid::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| idid::Error::Io(format!("{}: {e}", path.display())))
}

fn report_error(err: &idid::Error) {
    let body = idid::ErrorReport::from(err);
    eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| err.to_string()));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error(&idid::Error::InvalidConfig(e.to_string().trim().to_owned()));
            return ExitCode::from(1);
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            report_error(&idid::Error::InvalidConfig("--threads must be at least 1".into()));
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            report_error(&idid::Error::InvalidConfig(e.to_string()));
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
