//! Performance metrics over step and trade logs, and report files.
//!
//! The equity curve is the running sum of immediate rewards and starts from
//! an implicit zero before the first step. Drawdown is measured against
//! `base_capital + peak`, since the agent trades no fixed notional.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{StepLogEntry, TradeRecord};

pub const DEFAULT_BASE_CAPITAL: f64 = 10_000.0;
pub const DEFAULT_PERIODS_PER_YEAR: u32 = 252;

pub const REPORT_FILE: &str = "report.json";
pub const TRADES_FILE: &str = "trades.csv";
pub const PLOTDATA_FILE: &str = "plotdata.csv";
pub const STEPS_FILE: &str = "steps.jsonl";

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("sharpe ratio undefined: {0}")]
    UndefinedSharpe(&'static str),
    #[error("no trades")]
    NoTrades,
    #[error("base capital must be positive, got {0}")]
    BaseCapital(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BacktestError + '_ {
    move |source| BacktestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> BacktestError + '_ {
    move |source| BacktestError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Running sum of per-step rewards.
pub fn equity_curve(rewards: &[f64]) -> Vec<f64> {
    rewards
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

/// Per-step changes of a curve that starts from zero.
fn changes(curve: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    curve
        .iter()
        .map(|&c| {
            let d = c - prev;
            prev = c;
            d
        })
        .collect()
}

/// `mean(Δ) / sample_std(Δ) · √periods_per_year` with a zero risk-free rate.
pub fn sharpe_annualized(curve: &[f64], periods_per_year: u32) -> Result<f64, BacktestError> {
    let d = changes(curve);
    if d.len() < 2 {
        return Err(BacktestError::UndefinedSharpe("fewer than two periods"));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(BacktestError::UndefinedSharpe("zero variance"));
    }
    Ok(mean / var.sqrt() * f64::from(periods_per_year).sqrt())
}

/// Percentage of trades with strictly positive PnL.
pub fn win_ratio(trades: &[TradeRecord]) -> Result<f64, BacktestError> {
    if trades.is_empty() {
        return Err(BacktestError::NoTrades);
    }
    let wins = trades.iter().filter(|t| t.long_term_pnl > 0.0).count();
    Ok(100.0 * wins as f64 / trades.len() as f64)
}

/// Largest peak-to-trough fall of `base_capital + curve` as a non-positive
/// percentage of the peak level. The starting level counts as a peak.
///
/// Equity at or below zero is a total loss, so the result is floored at
/// -100%.
pub fn max_drawdown(curve: &[f64], base_capital: f64) -> Result<f64, BacktestError> {
    if base_capital.is_nan() || base_capital <= 0.0 {
        return Err(BacktestError::BaseCapital(base_capital));
    }
    let mut peak = 0.0f64;
    let mut worst = 0.0f64;
    for &c in curve {
        peak = peak.max(c);
        worst = worst.max((peak - c) / (base_capital + peak));
    }
    Ok(-100.0 * worst.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub base_capital: f64,
    pub periods_per_year: u32,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            base_capital: DEFAULT_BASE_CAPITAL,
            periods_per_year: DEFAULT_PERIODS_PER_YEAR,
        }
    }
}

/// Contents of `report.json`. Undefined metrics are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub instrument: String,
    pub period_start: String,
    pub period_end: String,
    pub sharpe: Option<f64>,
    pub win_ratio_pct: Option<f64>,
    pub mdd_pct: f64,
    pub n_trades: usize,
    pub total_pnl: f64,
    pub base_capital: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub instrument: String,
    pub period_start: String,
    pub period_end: String,
    pub seed: u64,
}

impl BacktestReport {
    /// Metrics over closed trades only; a position still open at the end
    /// contributes to PnL and drawdown but not to the trade count.
    pub fn compute(
        meta: ReportMeta,
        rewards: &[f64],
        trades: &[TradeRecord],
        config: &BacktestConfig,
    ) -> Result<Self, BacktestError> {
        let curve = equity_curve(rewards);
        Ok(Self {
            instrument: meta.instrument,
            period_start: meta.period_start,
            period_end: meta.period_end,
            sharpe: sharpe_annualized(&curve, config.periods_per_year).ok(),
            win_ratio_pct: win_ratio(trades).ok(),
            mdd_pct: max_drawdown(&curve, config.base_capital)?,
            n_trades: trades.len(),
            total_pnl: curve.last().copied().unwrap_or(0.0),
            base_capital: config.base_capital,
            seed: meta.seed,
        })
    }
}

/// One row of `plotdata.csv`: the bar at which a step's reward is realized,
/// its close, and equity after the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub t: usize,
    pub price: f64,
    pub equity: f64,
}

pub fn plot_rows(marks: &[(usize, f64)], rewards: &[f64]) -> Vec<PlotRow> {
    marks
        .iter()
        .zip(equity_curve(rewards))
        .map(|(&(t, price), equity)| PlotRow { t, price, equity })
        .collect()
}

/// Writes `report.json`, `trades.csv` and `plotdata.csv` into `dir`.
pub fn emit_report(
    dir: &Path,
    report: &BacktestReport,
    trades: &[TradeRecord],
    plot: &[PlotRow],
) -> Result<(), BacktestError> {
    let path = dir.join(REPORT_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| BacktestError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(io_err(&path))?;

    write_csv(
        &dir.join(TRADES_FILE),
        trades,
        "direction,open_t,close_t,contracts,long_term_pnl",
    )?;
    write_csv(&dir.join(PLOTDATA_FILE), plot, "t,price,equity")
}

/// Serializes rows under a fixed header; the header is written even when
/// there are no rows.
fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<(), BacktestError> {
    let mut file = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(file, "{header}").map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_step_log<W: Write>(steps: &[StepLogEntry], mut out: W) -> std::io::Result<()> {
    for s in steps {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepLogEntry>, BacktestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(
            serde_json::from_str(&line).map_err(|source| BacktestError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(steps)
}

pub fn read_trades(path: &Path) -> Result<Vec<TradeRecord>, BacktestError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))
}

pub fn read_report(path: &Path) -> Result<BacktestReport, BacktestError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| BacktestError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

#[cfg(test)]
mod tests;
