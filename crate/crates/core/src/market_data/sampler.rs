use super::{utc_day, Bar, SamplerConfig, Tick, WarmupPolicy};
use crate::{Error, Result};

/// Threshold from the completed-day dollar volume history, oldest first.
///
/// Averages the most recent `min(sma_window_days, len)` days and divides by
/// `tgt`. With [`WarmupPolicy::SkipWarmupDays`] a full window is required.
pub fn compute_threshold(daily_dollar_volumes: &[f64], cfg: &SamplerConfig) -> Result<f64> {
    let available = daily_dollar_volumes.len();
    let required = match cfg.warmup_policy {
        WarmupPolicy::UsePartialMean => 1,
        WarmupPolicy::SkipWarmupDays => cfg.sma_window_days,
    };
    if available < required {
        return Err(Error::NotWarmedUp(format!(
            "{available} completed day(s) of history, need {required}"
        )));
    }
    let window = cfg.sma_window_days.min(available);
    let tail = &daily_dollar_volumes[available - window..];
    let sma = tail.iter().sum::<f64>() / window as f64;
    Ok(sma / cfg.tgt)
}

#[derive(Debug, Clone, Copy)]
struct OpenBar {
    bar: Bar,
}

impl OpenBar {
    fn start(tick: &Tick, threshold: f64) -> Self {
        Self {
            bar: Bar {
                start_ts: tick.timestamp,
                end_ts: tick.timestamp,
                open: tick.price,
                high: tick.price,
                low: tick.price,
                close: tick.price,
                volume: 0.0,
                dollar_volume: 0.0,
                tick_count: 0,
                threshold,
            },
        }
    }

    fn add(&mut self, tick: &Tick) {
        let b = &mut self.bar;
        b.end_ts = tick.timestamp;
        b.high = b.high.max(tick.price);
        b.low = b.low.min(tick.price);
        b.close = tick.price;
        b.volume += tick.volume;
        b.dollar_volume += tick.dollar_volume();
        b.tick_count += 1;
    }
}

/// Result of a full sampling pass.
#[derive(Debug, Clone, Default)]
pub struct SampleOutput {
    pub bars: Vec<Bar>,
    /// Ticks seen before any threshold existed.
    pub warmup_ticks: u64,
    pub warmup_volume: f64,
    /// Unfinished trailing bar; never emitted as an observation.
    pub remainder: Option<Bar>,
}

/// Streaming dollar-volume bar sampler.
///
/// The threshold is recomputed at each UTC day rollover and latched when a
/// bar opens, so every bar is judged against a single threshold.
#[derive(Debug, Clone)]
pub struct DollarBarSampler {
    cfg: SamplerConfig,
    day: Option<i64>,
    day_dollar_volume: f64,
    history: Vec<f64>,
    threshold: Option<f64>,
    open: Option<OpenBar>,
    fixed: bool,
    warmup_ticks: u64,
    warmup_volume: f64,
}

impl DollarBarSampler {
    pub fn new(cfg: SamplerConfig) -> Self {
        Self {
            cfg,
            day: None,
            day_dollar_volume: 0.0,
            history: Vec::new(),
            threshold: None,
            open: None,
            fixed: false,
            warmup_ticks: 0,
            warmup_volume: 0.0,
        }
    }

    /// Sampler with a constant threshold and no warmup.
    pub fn with_fixed_threshold(threshold: f64) -> Self {
        let mut s = Self::new(SamplerConfig::default());
        s.threshold = Some(threshold);
        s.fixed = true;
        s
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// Completed-day dollar volumes seen so far.
    pub fn daily_history(&self) -> &[f64] {
        &self.history
    }

    pub fn push(&mut self, tick: &Tick) -> Option<Bar> {
        if !self.fixed {
            let day = utc_day(tick.timestamp);
            match self.day {
                Some(d) if d == day => {}
                Some(_) => {
                    self.history.push(self.day_dollar_volume);
                    self.day_dollar_volume = 0.0;
                    self.day = Some(day);
                    self.threshold = compute_threshold(&self.history, &self.cfg).ok();
                }
                None => self.day = Some(day),
            }
            self.day_dollar_volume += tick.dollar_volume();
        }

        let open = match (&mut self.open, self.threshold) {
            (Some(open), _) => open,
            (None, Some(threshold)) => self.open.insert(OpenBar::start(tick, threshold)),
            (None, None) => {
                self.warmup_ticks += 1;
                self.warmup_volume += tick.volume;
                return None;
            }
        };
        open.add(tick);
        if open.bar.dollar_volume > open.bar.threshold {
            let bar = open.bar;
            self.open = None;
            Some(bar)
        } else {
            None
        }
    }

    pub fn finish(self, bars: Vec<Bar>) -> SampleOutput {
        SampleOutput {
            bars,
            warmup_ticks: self.warmup_ticks,
            warmup_volume: self.warmup_volume,
            remainder: self.open.map(|o| o.bar),
        }
    }
}

/// Sample an ordered tick sequence into dollar-volume bars.
pub fn sample_bars(ticks: &[Tick], cfg: &SamplerConfig) -> Result<SampleOutput> {
    cfg.validate()?;
    let mut sampler = DollarBarSampler::new(*cfg);
    let bars = ticks.iter().filter_map(|t| sampler.push(t)).collect();
    Ok(sampler.finish(bars))
}
