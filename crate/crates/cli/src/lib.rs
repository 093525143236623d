//! `fmdp` command-line front end: feature dumps, learning runs, gradient
//! checks and report recomputation.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmdp_core::agent::{AgentError, RewardMode};
use fmdp_core::backtest::BacktestError;
use fmdp_core::env::EnvError;
use fmdp_core::market::MarketDataError;
use fmdp_core::qnet::{HeadActivation, QNetError};
use thiserror::Error;

pub use commands::{
    cmd_features, cmd_gradcheck, cmd_report, cmd_run, format_report, GradcheckSummary, Manifest,
    RunOutcome, REFERENCE_BANNER,
};
pub use config::{InstrumentSource, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Market {
        path: PathBuf,
        source: MarketDataError,
    },
    #[error("{instrument}: {source}")]
    Env {
        instrument: String,
        source: EnvError,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    QNet(#[from] QNetError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("gradient check failed: max relative error {max_rel_error:e} exceeds {tolerance:e}")]
    GradcheckFailed { max_rel_error: f64, tolerance: f64 },
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::MissingFile(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fmdp", version, about = "Online deep Q-learning trader")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the scaled feature matrix as CSV.
    Features(DataArgs),
    /// Learn online over the data and write logs, checkpoints and a report.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        learn: LearnArgs,
        /// Run the configured instruments concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        /// Number of seeded parameter draws (seeds 1..=N).
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Window lengths to test.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 8])]
        windows: Vec<usize>,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Recompute metrics from a run directory's logs.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Price CSV (timestamp,price).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub instrument: Option<String>,
    #[arg(long)]
    pub bar_seconds: Option<i64>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub commission: Option<f64>,
    #[arg(long)]
    pub max_contracts: Option<u32>,
    /// arithmetic or log
    #[arg(long, value_parser = parse_reward_mode)]
    pub reward_mode: Option<RewardMode>,
    /// linear or softmax
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadActivation>,
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub memory_capacity: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
}

fn parse_reward_mode(s: &str) -> Result<RewardMode, String> {
    match s {
        "arithmetic" => Ok(RewardMode::Arithmetic),
        "log" => Ok(RewardMode::Log),
        _ => Err(format!("expected `arithmetic` or `log`, got `{s}`")),
    }
}

fn parse_head(s: &str) -> Result<HeadActivation, String> {
    match s {
        "linear" => Ok(HeadActivation::Linear),
        "softmax" => Ok(HeadActivation::Softmax),
        _ => Err(format!("expected `linear` or `softmax`, got `{s}`")),
    }
}

impl Cli {
    fn overrides(&self, data: &DataArgs, learn: &LearnArgs) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            data_path: data.data.clone(),
            instrument: data.instrument.clone(),
            bar_seconds: data.bar_seconds,
            window: data.window,
            commission: learn.commission,
            max_contracts: learn.max_contracts,
            reward_mode: learn.reward_mode,
            head_activation: learn.head,
            total_steps: learn.total_steps,
            memory_capacity: learn.memory_capacity,
            tau: learn.tau,
        }
    }

    fn resolve(&self, data: &DataArgs, learn: &LearnArgs) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&self.overrides(data, learn));
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs a parsed command line, printing results to stdout.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Features(data) => {
            let cfg = cli.resolve(data, &LearnArgs::default())?;
            for path in cmd_features(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Run {
            data,
            learn,
            parallel,
        } => {
            let cfg = cli.resolve(data, learn)?;
            println!("{REFERENCE_BANNER}");
            for outcome in cmd_run(&cfg, *parallel)? {
                println!("{}", outcome.dir.display());
                println!("{}", format_report(&outcome.report, false));
            }
        }
        Command::Gradcheck {
            seeds,
            windows,
            corrupt_gradient,
        } => {
            let mut cfg = RunConfig::load(cli.config.as_deref())?;
            cfg.apply(&cli.overrides(&DataArgs::default(), &LearnArgs::default()));
            if windows.contains(&0) || *seeds == 0 {
                return Err(CliError::Config(
                    "seeds and windows must be at least 1".into(),
                ));
            }
            let summary = cmd_gradcheck(cfg.network, *seeds, windows, *corrupt_gradient)?;
            print!("{summary}");
            summary.into_result()?;
        }
        Command::Report { run_dir } => {
            let report = cmd_report(run_dir)?;
            println!("{}", format_report(&report, true));
        }
    }
    Ok(())
}

/// Entry point shared by the binary: parse, run, map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
