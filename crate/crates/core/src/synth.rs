//! Seeded synthetic tick streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::market_data::{Tick, NS_PER_DAY};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarketKind {
    Gbm,
    SinusoidalTrend,
    RegimeSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    /// Log drift per day.
    pub drift: f64,
    /// Log volatility per square-root day.
    pub volatility: f64,
}

/// Time is measured in days; `t_k = k / ticks_per_day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMarketSpec {
    pub kind: MarketKind,
    pub length_days: usize,
    pub ticks_per_day: usize,
    pub seed: u64,
    pub start_price: f64,
    /// Nanoseconds since the Unix epoch of the first tick.
    pub start_ts: i64,
    /// GBM drift per day (also the linear trend of the sinusoidal market).
    pub drift: f64,
    /// GBM volatility per square-root day.
    pub volatility: f64,
    /// Sinusoid amplitude in log price.
    pub amplitude: f64,
    pub period_days: f64,
    /// Brownian noise added to the sinusoidal log price, per square-root day.
    pub noise: f64,
    pub regimes: Vec<Regime>,
    /// Probability per day of leaving the current regime.
    pub switch_prob: f64,
    pub volume_mean: f64,
    /// Volumes are uniform on `volume_mean * [1 - jitter, 1 + jitter]`.
    pub volume_jitter: f64,
}

impl Default for SyntheticMarketSpec {
    fn default() -> Self {
        Self {
            kind: MarketKind::Gbm,
            length_days: 200,
            ticks_per_day: 200,
            seed: 0,
            start_price: 100.0,
            start_ts: 1_577_836_800 * 1_000_000_000,
            drift: 0.0,
            volatility: 0.02,
            amplitude: 0.1,
            period_days: 20.0,
            noise: 0.0,
            regimes: vec![
                Regime {
                    drift: 0.002,
                    volatility: 0.01,
                },
                Regime {
                    drift: -0.002,
                    volatility: 0.04,
                },
            ],
            switch_prob: 0.05,
            volume_mean: 10.0,
            volume_jitter: 0.5,
        }
    }
}

impl SyntheticMarketSpec {
    pub fn new(kind: MarketKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic market: {m}")));
        if self.length_days == 0 || self.ticks_per_day == 0 {
            return bad("length and ticks per day must be positive");
        }
        if NS_PER_DAY % self.ticks_per_day as i64 != 0 {
            return bad("ticks per day must divide the nanoseconds in a day");
        }
        if !(self.start_price > 0.0 && self.start_price.is_finite()) {
            return bad("start price must be positive");
        }
        if self.volatility < 0.0 || self.noise < 0.0 || !(self.volume_mean > 0.0) || !(0.0..1.0).contains(&self.volume_jitter) {
            return bad("volatility, noise must be non-negative, volume positive, jitter in [0, 1)");
        }
        match self.kind {
            MarketKind::SinusoidalTrend if !(self.period_days > 0.0) => bad("period must be positive"),
            MarketKind::RegimeSwitch if self.regimes.is_empty() || self.regimes.iter().any(|r| r.volatility < 0.0) => bad("need at least one regime with non-negative volatility"),
            MarketKind::RegimeSwitch if !(0.0..=1.0).contains(&self.switch_prob) => bad("switch probability must lie in [0, 1]"),
            _ => Ok(()),
        }
    }

    /// Human-readable generating equations.
    pub fn equations(&self) -> Vec<String> {
        let mut eqs = vec![
            "t_k = k / ticks_per_day (days), timestamp_k = start_ts + k * 86400e9 / ticks_per_day".to_string(),
            "volume_k = volume_mean * (1 + volume_jitter * U_k), U_k ~ Uniform[-1, 1)".to_string(),
        ];
        eqs.push(match self.kind {
            MarketKind::Gbm => "ln p_{k+1} = ln p_k + (drift - volatility^2 / 2) dt + volatility sqrt(dt) Z_k, Z_k ~ N(0, 1), dt = 1 / ticks_per_day".into(),
            MarketKind::SinusoidalTrend => {
                "ln p_k = ln start_price + amplitude sin(2 pi t_k / period_days) + drift t_k + noise W(t_k), W standard Brownian motion".into()
            }
            MarketKind::RegimeSwitch => {
                "s_{k+1} = next regime with probability switch_prob dt, else s_k; ln p_{k+1} = ln p_k + (drift_s - vol_s^2 / 2) dt + vol_s sqrt(dt) Z_k".into()
            }
        });
        eqs
    }
}

/// Metadata written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub spec: SyntheticMarketSpec,
    pub equations: Vec<String>,
    pub ticks: usize,
    /// Regime index per tick (regime-switch markets only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub regime_path: Vec<u8>,
}

pub struct SyntheticMarket {
    pub ticks: Vec<Tick>,
    pub metadata: SyntheticMetadata,
}

pub fn generate(spec: &SyntheticMarketSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut volume_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    volume_rng.set_stream(1);
    let count = spec.length_days * spec.ticks_per_day;
    let dt = 1.0 / spec.ticks_per_day as f64;
    let step_ns = NS_PER_DAY / spec.ticks_per_day as i64;
    let mut ticks = Vec::with_capacity(count);
    let mut regime_path = Vec::new();
    // Log price relative to the start price.
    let mut ln_p = 0.0;
    let mut brownian = 0.0;
    let mut regime = 0usize;
    for k in 0..count {
        let t = k as f64 * dt;
        match spec.kind {
            MarketKind::Gbm => {
                if k > 0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    ln_p += (spec.drift - 0.5 * spec.volatility.powi(2)) * dt + spec.volatility * dt.sqrt() * z;
                }
            }
            MarketKind::SinusoidalTrend => {
                if k > 0 && spec.noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    brownian += dt.sqrt() * z;
                }
                ln_p = spec.amplitude * (2.0 * std::f64::consts::PI * t / spec.period_days).sin() + spec.drift * t + spec.noise * brownian;
            }
            MarketKind::RegimeSwitch => {
                if k > 0 {
                    if spec.regimes.len() > 1 && rng.random::<f64>() < spec.switch_prob * dt {
                        regime = (regime + 1) % spec.regimes.len();
                    }
                    let r = spec.regimes[regime];
                    let z: f64 = StandardNormal.sample(&mut rng);
                    ln_p += (r.drift - 0.5 * r.volatility.powi(2)) * dt + r.volatility * dt.sqrt() * z;
                }
                regime_path.push(regime as u8);
            }
        }
        let price = spec.start_price * ln_p.exp();
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Numerics(format!("synthetic price left the positive reals at tick {k}")));
        }
        let jitter = if spec.volume_jitter > 0.0 { spec.volume_jitter * volume_rng.random_range(-1.0..1.0) } else { 0.0 };
        ticks.push(Tick::new(spec.start_ts + k as i64 * step_ns, price, spec.volume_mean * (1.0 + jitter)));
    }
    Ok(SyntheticMarket {
        metadata: SyntheticMetadata {
            spec: spec.clone(),
            equations: spec.equations(),
            ticks: ticks.len(),
            regime_path,
        },
        ticks,
    })
}
