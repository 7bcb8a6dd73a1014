//! Research engine for transaction-cost- and risk-sensitive trading agents
//! trained with deep policy-gradient methods on dollar-volume bars.
//!
//! Module map:
//! - [`market_data`]: tick parsing and dollar-volume bar sampling
//! - [`env`]: agent states, weight drift, and the reward
//! - [`approx`]: CNN/LSTM networks with hand-written backward passes and Adam
//! - [`agents`]: Gaussian policy gradient and deterministic actor-critic
//! - [`backtest`]: splits, early stopping, walk-forward testing, metrics
//! - [`config`], [`synth`]: run configuration and synthetic markets

// NaN-rejecting guards read as `!(x > 0.0)`; kernels index several buffers in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod market_data;
pub mod env;
pub mod approx;
pub mod agents;
pub mod backtest;
pub mod config;
pub mod synth;

pub use error::{Error, Result};
pub use market_data::{Bar, SamplerConfig, Tick, WarmupPolicy};
pub use env::{AgentState, EnvConfig, RewardConfig, StepRecord};
pub use approx::{Network, NetworkSpec, SilKind};
pub use agents::{build_agent, Agent, AgentConfig, Algorithm};
pub use backtest::{BacktestJob, BacktestReport, Metrics, SplitConfig};
pub use config::RunConfig;
pub use synth::{MarketKind, SyntheticMarketSpec};
