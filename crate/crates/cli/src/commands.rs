//! The four commands, callable without going through argument parsing.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use fmdp_core::agent::{online_learn, run_policy, Agent, RunLog};
use fmdp_core::backtest::{
    emit_report, plot_rows, read_report, read_step_log, read_trades, write_step_log, BacktestError,
    BacktestReport, ReportMeta, REPORT_FILE, STEPS_FILE, TRADES_FILE,
};
use fmdp_core::env::{EnvError, Environment, TradeRecord};
use fmdp_core::market::{load_price_series, MarketData};
use fmdp_core::qnet::gradcheck::{
    run_suite, suite_cases, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
use fmdp_core::qnet::{save_binary, NetDims, NetworkParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{InstrumentSource, RunConfig};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE_SUFFIX: &str = "features.csv";
/// Present in a run directory until the run finishes; holds the error if it
/// did not.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

pub const REFERENCE_BANNER: &str = "note: the published crude-oil results (Sharpe 4.09, win ratio 67.88%, \
MDD -7.33%) are reference points, not targets; the data windows and exact hyperparameters behind them \
are unavailable.";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct LoadedData {
    market: Arc<MarketData>,
    sha256: String,
}

fn load_market(cfg: &RunConfig, path: &Path) -> Result<LoadedData, CliError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
        _ => CliError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let market_err = |source| CliError::Market {
        path: path.to_path_buf(),
        source,
    };
    let series = load_price_series(bytes.as_slice()).map_err(market_err)?;
    let market = MarketData::from_series(
        &series,
        chrono::Duration::seconds(cfg.bar_seconds),
        &cfg.indicators,
        cfg.window,
    )
    .map_err(market_err)?;
    Ok(LoadedData {
        market: Arc::new(market),
        sha256,
    })
}

/// Writes `<out_dir>/<instrument>-features.csv` for every configured source.
pub fn cmd_features(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let mut written = Vec::new();
    for src in cfg.sources() {
        let data = load_market(cfg, &src.data_path)?;
        let path = cfg
            .out_dir
            .join(format!("{}-{FEATURES_FILE_SUFFIX}", src.name));
        let file = File::create(&path).map_err(io_err(&path))?;
        data.market
            .write_feature_csv(BufWriter::new(file))
            .map_err(|e| CliError::Io {
                path: path.clone(),
                source: e.into(),
            })?;
        written.push(path);
    }
    Ok(written)
}

/// Everything needed to reproduce a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub created_at: String,
    pub instrument: String,
    pub data_path: PathBuf,
    pub data_sha256: String,
    pub seed: u64,
    pub config: RunConfig,
    pub bars: usize,
    pub first_decision_index: usize,
    pub steps: usize,
    pub replay_cycles: usize,
    pub explorations: u32,
    /// Position still open when the data ended, valued at the last bar.
    pub open_trade: Option<TradeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: BacktestReport,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// `<out_dir>/<instrument>-<UTC time>-s<seed>`, suffixed when taken.
fn create_run_dir(
    out_dir: &Path,
    instrument: &str,
    seed: u64,
    now: DateTime<Utc>,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let stem = format!("{instrument}-{}-s{seed}", now.format("%Y%m%dT%H%M%SZ"));
    for n in 0u32.. {
        let dir = if n == 0 {
            out_dir.join(&stem)
        } else {
            out_dir.join(format!("{stem}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

fn write_checkpoint(path: &Path, params: &NetworkParams) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    save_binary(params, BufWriter::new(file))?;
    Ok(())
}

struct Executed {
    log: RunLog,
    replay_cycles: usize,
    explorations: u32,
}

fn execute_run(
    cfg: &RunConfig,
    src: &InstrumentSource,
    data: &LoadedData,
    dir: &Path,
) -> Result<RunOutcome, CliError> {
    let env_err = |source| CliError::Env {
        instrument: src.name.clone(),
        source,
    };
    let mut env = Environment::new(data.market.clone(), cfg.env).map_err(env_err)?;

    let executed = match cfg.scripted() {
        Some(script) => {
            let mut next = script.iter().copied();
            let log = run_policy(&mut env, Some(script.len()), |_| {
                next.next().expect("bounded by script length")
            });
            Executed {
                log,
                replay_cycles: 0,
                explorations: 0,
            }
        }
        None => {
            let mut agent = Agent::new(
                cfg.network,
                cfg.head_activation,
                cfg.agent,
                cfg.env.max_contracts,
                cfg.seed,
            )?;
            let run = online_learn(&mut env, &mut agent, cfg.total_steps)?;
            let ckpt_dir = dir.join("checkpoints");
            fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
            for (cycle, params) in &run.checkpoints {
                write_checkpoint(&ckpt_dir.join(format!("cycle-{cycle:06}.bin")), params)?;
            }
            write_checkpoint(&ckpt_dir.join("final.bin"), &agent.online)?;
            Executed {
                log: run.log,
                replay_cycles: run.replay_cycles,
                explorations: run.explorations,
            }
        }
    };
    let log = &executed.log;

    let steps_path = dir.join(STEPS_FILE);
    let file = File::create(&steps_path).map_err(io_err(&steps_path))?;
    write_step_log(&log.steps, BufWriter::new(file)).map_err(io_err(&steps_path))?;

    let bars = data.market.bars();
    let first = data.market.first_decision_index();
    let last = log.marks.last().map_or(first, |m| m.0);
    let meta = ReportMeta {
        instrument: src.name.clone(),
        period_start: timestamp(bars[first].start),
        period_end: timestamp(bars[last].start),
        seed: cfg.seed,
    };
    let rewards = log.rewards();
    let report = BacktestReport::compute(meta, &rewards, &log.trades, &cfg.backtest)?;
    emit_report(dir, &report, &log.trades, &plot_rows(&log.marks, &rewards))?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: timestamp(Utc::now()),
        instrument: src.name.clone(),
        data_path: src.data_path.clone(),
        data_sha256: data.sha256.clone(),
        seed: cfg.seed,
        config: RunConfig {
            instrument: src.name.clone(),
            data_path: Some(src.data_path.clone()),
            instruments: Vec::new(),
            ..cfg.clone()
        },
        bars: bars.len(),
        first_decision_index: first,
        steps: log.steps.len(),
        replay_cycles: executed.replay_cycles,
        explorations: executed.explorations,
        open_trade: log.open_trade.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)
        .map_err(|e| io_err(&path)(e.into()))?;

    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        report,
    })
}

fn run_one(cfg: &RunConfig, src: &InstrumentSource) -> Result<RunOutcome, CliError> {
    let data = load_market(cfg, &src.data_path)?;
    // fail before creating any output when there is nothing to trade
    Environment::new(data.market.clone(), cfg.env).map_err(|source| match source {
        EnvError::InsufficientData { .. } => CliError::Env {
            instrument: src.name.clone(),
            source,
        },
        other => CliError::Config(other.to_string()),
    })?;

    let dir = create_run_dir(&cfg.out_dir, &src.name, cfg.seed, Utc::now())?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "running\n").map_err(io_err(&marker))?;
    match execute_run(cfg, src, &data, &dir) {
        Ok(outcome) => {
            fs::remove_file(&marker).map_err(io_err(&marker))?;
            Ok(outcome)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

/// Learns online over each configured instrument and writes one run
/// directory per instrument. With `parallel`, instruments run on separate
/// threads, each with its own agent and environment.
pub fn cmd_run(cfg: &RunConfig, parallel: bool) -> Result<Vec<RunOutcome>, CliError> {
    let sources = cfg.sources();
    if !parallel || sources.len() < 2 {
        return sources.iter().map(|src| run_one(cfg, src)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = sources
            .iter()
            .map(|src| s.spawn(move || run_one(cfg, src)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("instrument worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSummary {
    pub cases: Vec<(u64, usize, GradCheckReport)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn into_result(self) -> Result<Self, CliError> {
        if self.passed() {
            Ok(self)
        } else {
            Err(CliError::GradcheckFailed {
                max_rel_error: self.max_rel_error,
                tolerance: self.tolerance,
            })
        }
    }
}

impl fmt::Display for GradcheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (seed, window, r) in &self.cases {
            writeln!(
                f,
                "seed {seed:>3}  W {window:>2}  params {}  max rel err {:.3e}  ({}[{}])",
                r.n_params, r.max_rel_error, r.worst_tensor, r.worst_index
            )?;
        }
        writeln!(
            f,
            "max relative error {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Central differences over seeds `1..=seeds` and each window length.
pub fn cmd_gradcheck(
    dims: NetDims,
    seeds: u64,
    windows: &[usize],
    corrupt: bool,
) -> Result<GradcheckSummary, CliError> {
    let seed_list: Vec<u64> = (1..=seeds).collect();
    let cases = suite_cases(&seed_list, windows);
    let reports = run_suite(dims, &cases, DEFAULT_STEP, corrupt)?;
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckSummary {
        cases: cases
            .iter()
            .zip(reports)
            .map(|(c, r)| (c.seed, c.window, r))
            .collect(),
        max_rel_error,
        tolerance: DEFAULT_TOLERANCE,
    })
}

/// Recomputes the report from `steps.jsonl` and `trades.csv`. Only the
/// descriptive fields and the backtest settings come from the stored files.
pub fn cmd_report(run_dir: &Path) -> Result<BacktestReport, CliError> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let manifest: Manifest = {
        let file = File::open(&manifest_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingFile(manifest_path.clone()),
            _ => io_err(&manifest_path)(e),
        })?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?
    };
    let stored = read_report(&run_dir.join(REPORT_FILE))?;
    let steps = read_step_log(&run_dir.join(STEPS_FILE))?;
    let trades = read_trades(&run_dir.join(TRADES_FILE))?;
    if trades.is_empty() {
        return Err(BacktestError::NoTrades.into());
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.immediate_reward).collect();
    let meta = ReportMeta {
        instrument: stored.instrument,
        period_start: stored.period_start,
        period_end: stored.period_end,
        seed: manifest.seed,
    };
    Ok(BacktestReport::compute(
        meta,
        &rewards,
        &trades,
        &manifest.config.backtest,
    )?)
}

/// Table row for a report, optionally preceded by the reference-figures note.
pub fn format_report(r: &BacktestReport, banner: bool) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}%"));
    let mut out = String::new();
    if banner {
        out.push_str(REFERENCE_BANNER);
        out.push('\n');
    }
    out.push_str("instrument | sharpe | win ratio | mdd | trades | total pnl | period\n");
    out.push_str(&format!(
        "{} | {} | {} | {:.2}% | {} | {:.4} | {} .. {}",
        r.instrument,
        r.sharpe
            .map_or_else(|| "undefined".to_string(), |s| format!("{s:.2}")),
        pct(r.win_ratio_pct),
        r.mdd_pct,
        r.n_trades,
        r.total_pnl,
        r.period_start,
        r.period_end,
    ));
    out
}
