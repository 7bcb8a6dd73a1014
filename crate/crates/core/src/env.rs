//! Trading MDP: agent states, weight drift, and the cost- and risk-adjusted reward.
//!
//! Timing convention: at decision index `t` the agent observes bars `..=t`,
//! holds the drifted weight `a_drifted`, rebalances to `a_new` (paying
//! `lambda_c * |a_new - a_drifted|`) and holds `a_new` over `(t, t+1]`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::market_data::Bar;
use crate::{Error, Result};

/// Floor applied to the feature normalization denominator.
pub const NORM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Row-major `3 x n`: rows are close, high, low log ratios.
    pub features: Vec<f64>,
    pub n: usize,
    pub prev_action: f64,
}

impl AgentState {
    pub fn new(features: Vec<f64>, n: usize, prev_action: f64) -> Result<Self> {
        let s = Self { features, n, prev_action };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != 3 * self.n {
            return Err(Error::Domain(format!(
                "state has {} features, expected 3 x {}",
                self.features.len(),
                self.n
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite state feature".into()));
        }
        if !(-1.0..=1.0).contains(&self.prev_action) {
            return Err(Error::Domain(format!("prev_action {} outside [-1, 1]", self.prev_action)));
        }
        Ok(())
    }

    /// Feature `row` (0 close, 1 high, 2 low) at window position `j`.
    pub fn feature(&self, row: usize, j: usize) -> f64 {
        self.features[row * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Proportional transaction cost.
    pub lambda_c: f64,
    /// Weight of the trailing net-return variance penalty.
    pub lambda_sigma: f64,
    /// Variance lookback `L`.
    pub lookback: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_c: 0.0002,
            lambda_sigma: 0.0,
            lookback: 60,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_c) {
            return Err(Error::Config(format!("lambda_c {} outside [0, 1]", self.lambda_c)));
        }
        if !(self.lambda_sigma >= 0.0) {
            return Err(Error::Config(format!("lambda_sigma {} must be >= 0", self.lambda_sigma)));
        }
        if self.lookback == 0 {
            return Err(Error::Config("lookback must be >= 1".into()));
        }
        Ok(())
    }
}

/// Denominator used to scale the log-price ratios of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `sigma_L * sqrt(L)`.
    #[default]
    StdDev,
    /// `sigma_L^2 * sqrt(L)`, not scale free.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Decision bar index.
    pub t: usize,
    /// Weight chosen at the previous decision.
    pub a_prev: f64,
    /// `a_prev` after drifting with the price over the previous period.
    pub a_drifted: f64,
    /// Weight chosen at `t`, held over `(t, t+1]`.
    pub a_new: f64,
    /// Multiplicative return over `(t, t+1]`.
    pub y: f64,
    pub r_gross: f64,
    pub r_net: f64,
    pub r: f64,
}

pub const STEP_RECORD_CSV_HEADER: &str = "t,a_prev,a_drifted,a_new,y,r_gross,r_net,r";

pub fn write_step_records_csv<W: Write>(w: W, records: &[StepRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "{STEP_RECORD_CSV_HEADER}")?;
    for s in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.t, s.a_prev, s.a_drifted, s.a_new, s.y, s.r_gross, s.r_net, s.r
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn multiplicative_return(p_t: f64, p_prev: f64) -> Result<f64> {
    if !(p_t > 0.0) || !(p_prev > 0.0) {
        return Err(Error::Domain(format!("prices must be positive, got {p_t} / {p_prev}")));
    }
    Ok(p_t / p_prev - 1.0)
}

/// Weight after a period with return `y`: `a (1 + y) / (a y + 1)`.
pub fn evolve_weight(a_prev: f64, y: f64) -> Result<f64> {
    let denom = a_prev * y + 1.0;
    if denom <= 0.0 {
        return Err(Error::DegeneratePortfolio(denom));
    }
    Ok(a_prev * (1.0 + y) / denom)
}

/// Population variance; fewer than two values give zero.
pub fn window_variance(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let (count, sum) = values.clone().into_iter().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    if count < 2 {
        return 0.0;
    }
    let mean = sum / count as f64;
    values.into_iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParts {
    pub r_gross: f64,
    pub r_net: f64,
    pub r: f64,
}

/// Reward for holding `a_held` over a period with return `y`, having
/// rebalanced from `a_drifted`.
///
/// `recent_net_returns` are the previous net returns, oldest first; only
/// the newest `lookback - 1` are used together with the current one.
pub fn reward(
    a_held: f64,
    a_drifted: f64,
    y: f64,
    recent_net_returns: &[f64],
    cfg: &RewardConfig,
) -> Result<RewardParts> {
    if !(y > -1.0) {
        return Err(Error::Domain(format!("return {y} <= -1")));
    }
    let r_gross = (1.0 + y).ln() * a_held;
    let r_net = r_gross - cfg.lambda_c * (a_held - a_drifted).abs();
    let keep = cfg.lookback.saturating_sub(1).min(recent_net_returns.len());
    let past = &recent_net_returns[recent_net_returns.len() - keep..];
    let variance = window_variance(past.iter().copied().chain(std::iter::once(r_net)));
    Ok(RewardParts {
        r_gross,
        r_net,
        r: r_net - cfg.lambda_sigma * variance,
    })
}

/// One normalized state column: log ratios of close, high, low to the previous close.
pub fn normalized_column(prev_close: f64, bar: &Bar, denom: f64) -> [f64; 3] {
    [
        (bar.close / prev_close).ln() / denom,
        (bar.high / prev_close).ln() / denom,
        (bar.low / prev_close).ln() / denom,
    ]
}

/// Bars of history needed before the first decision.
pub fn warmup_bars(n: usize, lookback: usize) -> usize {
    n.max(lookback)
}

/// Build the state at the last bar of `bars`.
pub fn build_state(
    bars: &[Bar],
    n: usize,
    lookback: usize,
    prev_action: f64,
    normalization: Normalization,
) -> Result<AgentState> {
    if n == 0 || lookback == 0 {
        return Err(Error::Config("window length and lookback must be >= 1".into()));
    }
    let need = warmup_bars(n, lookback) + 1;
    if bars.len() < need {
        return Err(Error::NotWarmedUp(format!("{} bars, need {need}", bars.len())));
    }
    let t = bars.len() - 1;
    let returns = (t + 1 - lookback..=t).map(|k| (bars[k].close / bars[k - 1].close).ln());
    let variance = window_variance(returns);
    let scale = match normalization {
        Normalization::StdDev => variance.sqrt(),
        Normalization::Variance => variance,
    };
    let denom = (scale * (lookback as f64).sqrt()).max(NORM_EPSILON);
    let mut features = vec![0.0; 3 * n];
    for j in 0..n {
        let k = t + 1 - n + j;
        let col = normalized_column(bars[k - 1].close, &bars[k], denom);
        for (row, v) in col.into_iter().enumerate() {
            features[row * n + j] = v;
        }
    }
    AgentState::new(features, n, prev_action)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Window length `n`.
    pub n: usize,
    pub reward: RewardConfig,
    pub normalization: Normalization,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n: 20,
            reward: RewardConfig::default(),
            normalization: Normalization::StdDev,
        }
    }
}

impl EnvConfig {
    pub fn warmup(&self) -> usize {
        warmup_bars(self.n, self.reward.lookback)
    }
}

/// Single-instrument environment over a bar slice.
///
/// Decisions happen at indices `start..end`; each step reads exactly one
/// bar beyond the decision index to realize the return.
#[derive(Debug, Clone)]
pub struct TradingEnv<'a> {
    bars: &'a [Bar],
    cfg: EnvConfig,
    t: usize,
    end: usize,
    a_prev: f64,
    a_drifted: f64,
    net_window: VecDeque<f64>,
}

impl<'a> TradingEnv<'a> {
    pub fn new(bars: &'a [Bar], cfg: EnvConfig, start: usize, end: usize) -> Result<Self> {
        cfg.reward.validate()?;
        let start = start.max(cfg.warmup());
        let end = end.min(bars.len().saturating_sub(1));
        if start >= end {
            return Err(Error::NotWarmedUp(format!(
                "no decision steps in [{start}, {end}) with {} bars",
                bars.len()
            )));
        }
        Ok(Self {
            bars,
            cfg,
            t: start,
            end,
            a_prev: 0.0,
            a_drifted: 0.0,
            net_window: VecDeque::with_capacity(cfg.reward.lookback),
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.end
    }

    /// Number of bars the environment can read; every index it touches is below this.
    pub fn horizon(&self) -> usize {
        self.bars.len()
    }

    pub fn remaining(&self) -> usize {
        self.end.saturating_sub(self.t)
    }

    pub fn prev_action(&self) -> f64 {
        self.a_prev
    }

    pub fn state(&self) -> Result<AgentState> {
        build_state(
            &self.bars[..=self.t],
            self.cfg.n,
            self.cfg.reward.lookback,
            self.a_prev,
            self.cfg.normalization,
        )
    }

    /// Apply `action` at the current decision index. Returns the next state
    /// (unless the episode is over) and the step record.
    pub fn step(&mut self, action: f64) -> Result<(Option<AgentState>, StepRecord)> {
        if self.done() {
            return Err(Error::State("step past end of episode".into()));
        }
        if !(-1.0..=1.0).contains(&action) {
            return Err(Error::Domain(format!("action {action} outside [-1, 1]")));
        }
        let t = self.t;
        let y = multiplicative_return(self.bars[t + 1].close, self.bars[t].close)?;
        let window: Vec<f64> = self.net_window.iter().copied().collect();
        let parts = reward(action, self.a_drifted, y, &window, &self.cfg.reward)?;
        let record = StepRecord {
            t,
            a_prev: self.a_prev,
            a_drifted: self.a_drifted,
            a_new: action,
            y,
            r_gross: parts.r_gross,
            r_net: parts.r_net,
            r: parts.r,
        };
        if self.net_window.len() + 1 >= self.cfg.reward.lookback {
            self.net_window.pop_front();
        }
        if self.cfg.reward.lookback > 1 {
            self.net_window.push_back(parts.r_net);
        }
        self.a_drifted = evolve_weight(action, y)?;
        self.a_prev = action;
        self.t += 1;
        let next = if self.done() { None } else { Some(self.state()?) };
        Ok((next, record))
    }
}
