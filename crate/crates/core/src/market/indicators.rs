//! Technical indicators (pure functions, no IO).
//!
//! Value at index `i` depends only on inputs `0..=i`. Indicators with a
//! warmup return `None` where they are not yet defined.

use chrono::NaiveDate;

use super::{Bar, MarketDataError, Result};

pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const RSI_PERIOD: usize = 14;
pub const WILLIAMS_PERIOD: usize = 14;

/// Exponential moving average seeded with the first value, `k = 2/(period+1)`.
pub fn ema(values: &[f64], period: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(MarketDataError::ZeroPeriod { what: "ema" });
    }
    let k = 2.0 / (period as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut prev = match values.first() {
        Some(&v) => v,
        None => return Ok(out),
    };
    out.push(prev);
    for &v in &values[1..] {
        prev += k * (v - prev);
        out.push(prev);
    }
    Ok(out)
}

/// Slow EMA minus fast EMA.
///
/// Note the sign: this is `ema(26) - ema(12)`, the reverse of the common
/// `12 - 26` convention, so an uptrend yields a negative value.
pub fn macd(closes: &[f64]) -> Vec<f64> {
    macd_with(closes, MACD_FAST, MACD_SLOW).expect("default periods are non-zero")
}

pub fn macd_with(closes: &[f64], fast: usize, slow: usize) -> Result<Vec<f64>> {
    let slow_ema = ema(closes, slow)?;
    let fast_ema = ema(closes, fast)?;
    Ok(slow_ema.iter().zip(&fast_ema).map(|(s, f)| s - f).collect())
}

/// Wilder-smoothed relative strength index.
///
/// The first `period` entries are `None`. The seed averages are the simple
/// means of the first `period` gains and losses; afterwards
/// `avg = (avg * (period - 1) + x) / period`. A window with no losses reads
/// 100, no gains reads 0, and a completely flat window reads 50.
pub fn rsi(closes: &[f64], period: usize) -> Result<Vec<Option<f64>>> {
    if period == 0 {
        return Err(MarketDataError::ZeroPeriod { what: "rsi" });
    }
    if closes.len() <= period {
        return Err(MarketDataError::InsufficientData {
            what: "rsi",
            needed: period,
            got: closes.len(),
        });
    }

    let p = period as f64;
    let mut out = vec![None; closes.len()];
    let (mut gain, mut loss) = (0.0, 0.0);
    for i in 1..=period {
        let d = closes[i] - closes[i - 1];
        gain += d.max(0.0);
        loss += (-d).max(0.0);
    }
    gain /= p;
    loss /= p;
    out[period] = Some(rsi_from_averages(gain, loss));

    for i in period + 1..closes.len() {
        let d = closes[i] - closes[i - 1];
        gain = (gain * (p - 1.0) + d.max(0.0)) / p;
        loss = (loss * (p - 1.0) + (-d).max(0.0)) / p;
        out[i] = Some(rsi_from_averages(gain, loss));
    }
    Ok(out)
}

fn rsi_from_averages(gain: f64, loss: f64) -> f64 {
    if loss == 0.0 {
        if gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        let value = 100.0 - 100.0 / (1.0 + gain / loss);
        value.clamp(0.0, 100.0)
    }
}

/// Williams %R over the trailing `period` bars, in `[-100, 0]`.
///
/// The first `period - 1` entries are `None`. A window with no range
/// (highest high equals lowest low) reads 0.
pub fn williams_r(bars: &[Bar], period: usize) -> Result<Vec<Option<f64>>> {
    if period == 0 {
        return Err(MarketDataError::ZeroPeriod { what: "williams_r" });
    }
    if bars.len() < period {
        return Err(MarketDataError::InsufficientData {
            what: "williams_r",
            needed: period - 1,
            got: bars.len(),
        });
    }

    let mut out = vec![None; bars.len()];
    for i in period - 1..bars.len() {
        let window = &bars[i + 1 - period..=i];
        let (hh, ll) = window
            .iter()
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), b| {
                (h.max(b.high), l.min(b.low))
            });
        let value = if hh == ll {
            0.0
        } else {
            (-100.0 * (hh - bars[i].close) / (hh - ll)).clamp(-100.0, 0.0)
        };
        out[i] = Some(value);
    }
    Ok(out)
}

/// Signed body-to-range ratio of a candlestick, in `[-1, 1]`.
pub fn weighted_bar_direction(bar: &Bar) -> f64 {
    let range = bar.high - bar.low;
    if range <= 0.0 {
        return 0.0;
    }
    ((bar.close - bar.open) / range).clamp(-1.0, 1.0)
}

/// High-low range over one day's bars; `None` when there are no bars.
pub fn hl_range(prev_day_bars: &[Bar]) -> Option<f64> {
    let (hh, ll) = prev_day_bars
        .iter()
        .fold(None, |acc: Option<(f64, f64)>, b| match acc {
            None => Some((b.high, b.low)),
            Some((h, l)) => Some((h.max(b.high), l.min(b.low))),
        })?;
    Some((hh - ll).max(0.0))
}

/// Previous-day high-low range for every bar.
///
/// "Previous day" is the most recent earlier UTC calendar date that has bars,
/// so the first trading day after a weekend or holiday still sees a value.
/// Bars on the first date in the series get `None`.
pub fn hl_range_series(bars: &[Bar]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(bars.len());
    let mut prev_day: Option<f64> = None;
    let mut current: Option<(NaiveDate, f64, f64)> = None;

    for b in bars {
        let date = b.start.date_naive();
        current = match current {
            Some((d, h, l)) if d == date => Some((d, h.max(b.high), l.min(b.low))),
            Some((_, h, l)) => {
                prev_day = Some((h - l).max(0.0));
                Some((date, b.high, b.low))
            }
            None => Some((date, b.high, b.low)),
        };
        out.push(prev_day);
    }
    out
}
