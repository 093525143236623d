use std::f64::consts::TAU;
use std::io::Write;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::indicators::{self, hl_range_series, weighted_bar_direction};
use super::{resample_bars, scale_expanding, Bar, MarketDataError, PriceSeries, Result};

pub const N_FEATURES: usize = 9;

pub const FEATURE_COLUMNS: [&str; N_FEATURES] = [
    "macd",
    "rsi",
    "williams_r",
    "bar_direction",
    "hl_range",
    "dow_sin",
    "dow_cos",
    "tod_sin",
    "tod_cos",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorVector {
    pub macd: f64,
    pub rsi: f64,
    pub williams_r: f64,
    pub bar_direction: f64,
    pub hl_range: f64,
    pub time_enc: [f64; 4],
}

impl IndicatorVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        let [a, b, c, d] = self.time_enc;
        [
            self.macd,
            self.rsi,
            self.williams_r,
            self.bar_direction,
            self.hl_range,
            a,
            b,
            c,
            d,
        ]
    }
}

/// Cyclical day-of-week (Monday = 0) and time-of-day encoding:
/// `(sin, cos)` of `2π·dow/7` followed by `(sin, cos)` of `2π·sec/86400`.
pub fn encode_timestamp(t: DateTime<Utc>) -> [f64; 4] {
    let dow = TAU * f64::from(t.weekday().num_days_from_monday()) / 7.0;
    let tod = TAU * f64::from(t.num_seconds_from_midnight()) / 86_400.0;
    [dow.sin(), dow.cos(), tod.sin(), tod.cos()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorConfig {
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub rsi_period: usize,
    pub williams_period: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            macd_fast: indicators::MACD_FAST,
            macd_slow: indicators::MACD_SLOW,
            rsi_period: indicators::RSI_PERIOD,
            williams_period: indicators::WILLIAMS_PERIOD,
        }
    }
}

/// Raw indicators for every bar plus the first index at which all of them
/// are defined from there on.
///
/// The MACD column is treated as warm once `macd_slow` price changes have
/// been observed.
pub fn compute_indicators(
    bars: &[Bar],
    cfg: &IndicatorConfig,
) -> Result<(Vec<Option<IndicatorVector>>, usize)> {
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let macd = indicators::macd_with(&closes, cfg.macd_fast, cfg.macd_slow)?;
    let rsi = indicators::rsi(&closes, cfg.rsi_period)?;
    let wr = indicators::williams_r(bars, cfg.williams_period)?;
    let hl = hl_range_series(bars);

    let hl_first = hl.iter().position(Option::is_some).unwrap_or(bars.len());
    let warmup = cfg
        .macd_slow
        .max(cfg.rsi_period)
        .max(cfg.williams_period - 1)
        .max(hl_first);

    let out = (0..bars.len())
        .map(|i| {
            if i < warmup {
                return None;
            }
            Some(IndicatorVector {
                macd: macd[i],
                rsi: rsi[i]?,
                williams_r: wr[i]?,
                bar_direction: weighted_bar_direction(&bars[i]),
                hl_range: hl[i]?,
                time_enc: encode_timestamp(bars[i].start),
            })
        })
        .collect();
    Ok((out, warmup))
}

/// Scaled features for bar indices `offset..offset + rows.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    offset: usize,
    rows: Vec<[f64; N_FEATURES]>,
}

impl FeatureMatrix {
    pub fn new(offset: usize, rows: Vec<[f64; N_FEATURES]>) -> Self {
        Self { offset, rows }
    }

    /// First bar index with a feature row.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// One past the last bar index with a feature row.
    pub fn end(&self) -> usize {
        self.offset + self.rows.len()
    }

    pub fn rows(&self) -> &[[f64; N_FEATURES]] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> Option<&[f64; N_FEATURES]> {
        index
            .checked_sub(self.offset)
            .and_then(|i| self.rows.get(i))
    }
}

/// `len` consecutive feature rows ending at `end_index`, oldest first.
///
/// Shares the underlying matrix, so cloning is cheap.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    matrix: Arc<FeatureMatrix>,
    end_index: usize,
    len: usize,
}

impl FeatureWindow {
    pub fn end_index(&self) -> usize {
        self.end_index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rows(&self) -> &[[f64; N_FEATURES]] {
        let hi = self.end_index + 1 - self.matrix.offset;
        &self.matrix.rows[hi - self.len..hi]
    }

    /// Row-major `len × N_FEATURES` view.
    pub fn as_flat(&self) -> &[f64] {
        self.rows().as_flattened()
    }
}

impl PartialEq for FeatureWindow {
    fn eq(&self, other: &Self) -> bool {
        self.end_index == other.end_index && self.rows() == other.rows()
    }
}

pub fn build_feature_window(
    features: &Arc<FeatureMatrix>,
    end_index: usize,
    window: usize,
) -> Result<FeatureWindow> {
    let unavailable = MarketDataError::WindowUnavailable {
        end_index,
        window,
        warmup: features.offset,
    };
    if window == 0 || end_index + 1 < features.offset + window || end_index >= features.end() {
        return Err(unavailable);
    }
    Ok(FeatureWindow {
        matrix: Arc::clone(features),
        end_index,
        len: window,
    })
}

/// Everything the environment needs from one instrument: bars, their close
/// prices, and the causally scaled feature matrix.
#[derive(Debug, Clone)]
pub struct MarketData {
    bars: Vec<Bar>,
    closes: Vec<f64>,
    features: Arc<FeatureMatrix>,
    window: usize,
}

impl MarketData {
    pub fn from_series(
        series: &PriceSeries,
        bar_duration: Duration,
        indicator_cfg: &IndicatorConfig,
        window: usize,
    ) -> Result<Self> {
        let bars = resample_bars(series, bar_duration)?;
        Self::from_bars(bars, indicator_cfg, window)
    }

    pub fn from_bars(
        bars: Vec<Bar>,
        indicator_cfg: &IndicatorConfig,
        window: usize,
    ) -> Result<Self> {
        if window == 0 {
            return Err(MarketDataError::ZeroPeriod { what: "window" });
        }
        let (raw, warmup) = compute_indicators(&bars, indicator_cfg)?;
        let raw_rows: Vec<[f64; N_FEATURES]> = raw[warmup.min(raw.len())..]
            .iter()
            .map(|v| v.expect("indicators are defined from warmup on").to_array())
            .collect();
        let features = Arc::new(FeatureMatrix::new(warmup, scale_expanding(&raw_rows)));
        let closes = bars.iter().map(|b| b.close).collect();
        Ok(Self {
            bars,
            closes,
            features,
            window,
        })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn features(&self) -> &Arc<FeatureMatrix> {
        &self.features
    }

    pub fn warmup(&self) -> usize {
        self.features.offset
    }

    pub fn window_len(&self) -> usize {
        self.window
    }

    /// First bar index with a complete feature window.
    pub fn first_decision_index(&self) -> usize {
        self.features.offset + self.window - 1
    }

    pub fn window(&self, end_index: usize) -> Result<FeatureWindow> {
        build_feature_window(&self.features, end_index, self.window)
    }

    /// Feature dump: header then one row of scaled values per bar from warmup.
    pub fn write_feature_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FEATURE_COLUMNS)?;
        for row in self.features.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
