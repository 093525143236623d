//! Market data: price ingestion, bar resampling, technical indicators and
//! causal feature scaling.
//!
//! The only raw input is a sequence of `(timestamp, price)` points. Bars are
//! derived from it by fixed-interval resampling and every indicator is a pure
//! function of the bars up to and including the index it is reported at.

mod features;
pub mod indicators;
mod scaling;

use std::io::Read;

use chrono::{DateTime, Duration, Utc};
use serde::Deserialize;
use thiserror::Error;

pub use features::{
    build_feature_window, compute_indicators, encode_timestamp, FeatureMatrix, FeatureWindow,
    IndicatorConfig, IndicatorVector, MarketData, FEATURE_COLUMNS, N_FEATURES,
};
pub use scaling::{scale_expanding, DEGENERATE_SCALE, SCALE_MAX, SCALE_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum MarketDataError {
    #[error("no data rows")]
    NoData,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} is not after the previous row")]
    Ordering { line: u64, timestamp: DateTime<Utc> },
    #[error("line {line}: price must be positive, got {price}")]
    NonPositivePrice { line: u64, price: f64 },
    #[error("{what}: period must be at least 1")]
    ZeroPeriod { what: &'static str },
    #[error("bar duration must be positive")]
    NonPositiveDuration,
    #[error("{what} needs more than {needed} values, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("feature window ending at {end_index} needs {window} rows after warmup {warmup}")]
    WindowUnavailable {
        end_index: usize,
        window: usize,
        warmup: usize,
    },
}

pub type Result<T, E = MarketDataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricePoint {
    pub timestamp: DateTime<Utc>,
    pub price: f64,
}

/// Strictly time-ordered, non-empty sequence of positive prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    points: Vec<PricePoint>,
}

impl PriceSeries {
    /// Validates ordering and positivity. Line numbers in errors assume a
    /// header on line 1, matching the CSV layout.
    pub fn new(points: Vec<PricePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(MarketDataError::NoData);
        }
        for (i, p) in points.iter().enumerate() {
            let line = i as u64 + 2;
            if !p.price.is_finite() || p.price <= 0.0 {
                return Err(MarketDataError::NonPositivePrice {
                    line,
                    price: p.price,
                });
            }
            if i > 0 && p.timestamp <= points[i - 1].timestamp {
                return Err(MarketDataError::Ordering {
                    line,
                    timestamp: p.timestamp,
                });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[PricePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &PricePoint {
        &self.points[0]
    }

    pub fn last(&self) -> &PricePoint {
        &self.points[self.points.len() - 1]
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    timestamp: String,
    price: String,
}

/// Reads a `timestamp,price` CSV with a header row.
///
/// Timestamps are RFC 3339 (ISO-8601 with an offset or a trailing `Z`);
/// they are normalized to UTC. Prices are parsed as `f64`.
pub fn load_price_series<R: Read>(source: R) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| MarketDataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for required in ["timestamp", "price"] {
        if !headers.iter().any(|h| h == required) {
            return Err(MarketDataError::Parse {
                line: 1,
                message: format!("missing `{required}` column"),
            });
        }
    }

    let mut points: Vec<PricePoint> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketDataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow =
            record
                .deserialize(Some(&headers))
                .map_err(|e| MarketDataError::Parse {
                    line,
                    message: e.to_string(),
                })?;
        let timestamp = DateTime::parse_from_rfc3339(&row.timestamp)
            .map_err(|e| MarketDataError::Parse {
                line,
                message: format!("bad timestamp `{}`: {e}", row.timestamp),
            })?
            .with_timezone(&Utc);
        let price: f64 = row.price.parse().map_err(|_| MarketDataError::Parse {
            line,
            message: format!("bad price `{}`", row.price),
        })?;
        if !price.is_finite() || price <= 0.0 {
            return Err(MarketDataError::NonPositivePrice { line, price });
        }
        if let Some(prev) = points.last() {
            if timestamp <= prev.timestamp {
                return Err(MarketDataError::Ordering { line, timestamp });
            }
        }
        points.push(PricePoint { timestamp, price });
    }

    if points.is_empty() {
        return Err(MarketDataError::NoData);
    }
    Ok(PriceSeries { points })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub start: DateTime<Utc>,
    pub duration: Duration,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl Bar {
    pub fn from_price(start: DateTime<Utc>, duration: Duration, price: f64) -> Self {
        Self {
            start,
            duration,
            open: price,
            high: price,
            low: price,
            close: price,
        }
    }

    fn absorb(&mut self, price: f64) {
        self.high = self.high.max(price);
        self.low = self.low.min(price);
        self.close = price;
    }
}

/// Groups points into epoch-aligned intervals of `duration` and emits one
/// OHLC bar per non-empty interval.
pub fn resample_bars(series: &PriceSeries, duration: Duration) -> Result<Vec<Bar>> {
    let span = duration.num_seconds();
    if span <= 0 {
        return Err(MarketDataError::NonPositiveDuration);
    }

    let mut bars: Vec<Bar> = Vec::new();
    let mut current_bucket = i64::MIN;
    for p in series.points() {
        let bucket = p.timestamp.timestamp().div_euclid(span);
        if bucket == current_bucket {
            // points are strictly ordered, so an equal bucket is always the last bar
            if let Some(bar) = bars.last_mut() {
                bar.absorb(p.price);
            }
        } else {
            let start = DateTime::from_timestamp(bucket * span, 0)
                .expect("bucket start lies within the range of the input timestamps");
            bars.push(Bar::from_price(start, duration, p.price));
            current_bucket = bucket;
        }
    }
    Ok(bars)
}
