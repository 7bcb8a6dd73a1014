//! Declarative run configuration (TOML).
//!
//! Top-level keys hold the hyperparameter table and the experiment selection;
//! subtables hold the remaining knobs. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, Algorithm, ExplorationSchedule};
use crate::approx::{CnnSpec, LstmSpec, SilKind, WeightDecayMode};
use crate::backtest::{BacktestJob, SplitConfig};
use crate::env::{EnvConfig, Normalization, RewardConfig};
use crate::market_data::{SamplerConfig, WarmupPolicy};
use crate::synth::SyntheticMarketSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub sil: SilKind,
    pub alpha_actor: f64,
    pub alpha_critic: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub lambda_c: f64,
    pub lambda_sigma: f64,
    /// Window length `n`.
    pub n: usize,
    /// Volatility and reward-variance lookback `L`.
    pub lookback: usize,
    /// Target bars per day.
    pub tgt: f64,
    pub seeds: Vec<u64>,
    /// Annualization factor; `252 * tgt` when unset.
    pub bars_per_year: Option<f64>,
    pub sampler: SamplerSection,
    pub env: EnvSection,
    pub agent: AgentSection,
    pub backtest: SplitConfig,
    pub data: DataSection,
    pub synth: SyntheticMarketSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub sma_window_days: usize,
    pub warmup_policy: WarmupPolicy,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            sma_window_days: s.sma_window_days,
            warmup_policy: s.warmup_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub update_every: usize,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecayMode,
    pub grad_clip_norm: f64,
    pub dropout_rate: f64,
    pub action_channel: bool,
    pub exploration: Option<ExplorationSchedule>,
    pub cnn: CnnSpec,
    pub lstm: LstmSpec,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            update_every: a.update_every,
            weight_decay: a.weight_decay,
            weight_decay_mode: a.weight_decay_mode,
            grad_clip_norm: a.grad_clip_norm,
            dropout_rate: a.dropout_rate,
            action_channel: a.action_channel,
            exploration: a.exploration,
            cnn: a.cnn,
            lstm: a.lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub ticks: Option<PathBuf>,
    pub bars: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            ticks: None,
            bars: None,
            out: PathBuf::from("out"),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Pg,
            sil: SilKind::Cnn,
            alpha_actor: 0.0001,
            alpha_critic: 0.001,
            batch_size: 128,
            replay_capacity: 1000,
            lambda_c: 0.0002,
            lambda_sigma: 0.0,
            n: 20,
            lookback: 60,
            tgt: 5.0,
            seeds: (0..10).collect(),
            bars_per_year: None,
            sampler: SamplerSection::default(),
            env: EnvSection::default(),
            agent: AgentSection::default(),
            backtest: SplitConfig::default(),
            data: DataSection::default(),
            synth: SyntheticMarketSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            tgt: self.tgt,
            sma_window_days: self.sampler.sma_window_days,
            warmup_policy: self.sampler.warmup_policy,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            n: self.n,
            reward: RewardConfig {
                lambda_c: self.lambda_c,
                lambda_sigma: self.lambda_sigma,
                lookback: self.lookback,
            },
            normalization: self.env.normalization,
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            algorithm: self.algorithm,
            sil: self.sil,
            n: self.n,
            alpha_actor: self.alpha_actor,
            alpha_critic: self.alpha_critic,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            update_every: a.update_every,
            exploration: a.exploration,
            weight_decay: a.weight_decay,
            weight_decay_mode: a.weight_decay_mode,
            grad_clip_norm: a.grad_clip_norm,
            dropout_rate: a.dropout_rate,
            action_channel: a.action_channel,
            cnn: a.cnn.clone(),
            lstm: a.lstm.clone(),
        }
    }

    pub fn bars_per_year(&self) -> f64 {
        self.bars_per_year.unwrap_or(252.0 * self.tgt)
    }

    pub fn job(&self) -> BacktestJob {
        BacktestJob {
            agent: self.agent_config(),
            env: self.env_config(),
            split: self.backtest.clone(),
            bars_per_year: self.bars_per_year(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler_config().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.job().validate()
    }

    /// Canonical JSON echo embedded in reports.
    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
