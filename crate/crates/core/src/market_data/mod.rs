//! Trade ingestion and dollar-volume bar sampling.
//!
//! Bars close on the trade whose cumulative dollar volume since the last
//! bar strictly exceeds a threshold. The threshold is a simple moving
//! average of daily dollar volume divided by the target number of bars per
//! day, recomputed at every UTC day rollover.

mod format;
mod parse;
mod sampler;

pub use format::{fmt_sig, read_bars_csv, write_bars_csv, write_ticks_binary, write_ticks_csv};
pub use parse::{parse_ticks, ParsedTicks, RowError, TickFormat, REORDER_TOLERANCE_NS, TICK_BINARY_MAGIC};
pub use sampler::{compute_threshold, sample_bars, DollarBarSampler, SampleOutput};

use serde::{Deserialize, Serialize};

pub const NS_PER_DAY: i64 = 86_400_000_000_000;

/// UTC day index (days since the Unix epoch) of a nanosecond timestamp.
pub fn utc_day(ts: i64) -> i64 {
    ts.div_euclid(NS_PER_DAY)
}

/// One executed trade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    /// Nanoseconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub price: f64,
    pub volume: f64,
}

impl Tick {
    pub fn new(timestamp: i64, price: f64, volume: f64) -> Self {
        Self {
            timestamp,
            price,
            volume,
        }
    }

    pub fn dollar_volume(&self) -> f64 {
        self.price * self.volume
    }
}

/// One dollar-volume sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub start_ts: i64,
    pub end_ts: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub dollar_volume: f64,
    pub tick_count: u64,
    /// Threshold the bar was sampled against. Not part of the CSV output.
    #[serde(default)]
    pub threshold: f64,
}

impl Bar {
    /// A bar made of a single price, handy for synthetic close-only series.
    pub fn flat(ts: i64, price: f64) -> Self {
        Self {
            start_ts: ts,
            end_ts: ts,
            open: price,
            high: price,
            low: price,
            close: price,
            volume: 1.0,
            dollar_volume: price,
            tick_count: 1,
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WarmupPolicy {
    /// Average over whatever completed days exist (at least one).
    #[default]
    UsePartialMean,
    /// No bars until a full SMA window of completed days exists.
    SkipWarmupDays,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Target number of bars per day.
    pub tgt: f64,
    pub sma_window_days: usize,
    pub warmup_policy: WarmupPolicy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tgt: 5.0,
            sma_window_days: 90,
            warmup_policy: WarmupPolicy::UsePartialMean,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.tgt > 0.0) || !self.tgt.is_finite() {
            return Err(crate::Error::Config(format!("tgt must be positive, got {}", self.tgt)));
        }
        if self.sma_window_days == 0 {
            return Err(crate::Error::Config("sma_window_days must be >= 1".into()));
        }
        Ok(())
    }
}
