//! Learning agents: Gaussian policy gradient (PG) and deterministic
//! actor-critic (AC) with replay memory.

pub mod ac;
pub mod diagnostics;
pub mod exploration;
pub mod pg;
pub mod replay;

use serde::{Deserialize, Serialize};

use crate::approx::{CheckpointEntry, CnnSpec, LstmCarry, LstmSpec, Network, NetworkSpec, OptimizerConfig, ParameterSet, SilKind, WeightDecayMode};
use crate::env::{AgentState, TradingEnv};
use crate::{Error, Result};

pub use ac::AcAgent;
pub use diagnostics::{write_jsonl, DiagnosticRecord};
pub use exploration::{gaussian_action, gaussian_log_density, uniform_action, ExplorationSchedule};
pub use pg::PgAgent;
pub use replay::{ReplayMemory, ReplayMode, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    Pg,
    Ac,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Pg => "PG",
            Algorithm::Ac => "AC",
        }
    }
}

pub fn sil_label(sil: SilKind) -> &'static str {
    match sil {
        SilKind::Cnn => "CNN",
        SilKind::Lstm => "LSTM",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub sil: SilKind,
    /// Window length; must match the environment.
    pub n: usize,
    pub alpha_actor: f64,
    pub alpha_critic: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// AC only: environment steps between replay updates.
    pub update_every: usize,
    /// Defaults per algorithm when unset.
    pub exploration: Option<ExplorationSchedule>,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecayMode,
    pub grad_clip_norm: f64,
    pub dropout_rate: f64,
    /// Feed the action into the Q network's SIL as well as its decision layer.
    pub action_channel: bool,
    pub cnn: CnnSpec,
    pub lstm: LstmSpec,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Pg,
            sil: SilKind::Cnn,
            n: 20,
            alpha_actor: 1e-4,
            alpha_critic: 1e-3,
            batch_size: 128,
            replay_capacity: 1000,
            update_every: 16,
            exploration: None,
            weight_decay: 0.001,
            weight_decay_mode: WeightDecayMode::Decoupled,
            grad_clip_norm: 1.0,
            dropout_rate: 0.2,
            action_channel: true,
            cnn: CnnSpec::default(),
            lstm: LstmSpec::default(),
        }
    }
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm, sil: SilKind, n: usize) -> Self {
        Self {
            algorithm,
            sil,
            n,
            ..Self::default()
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.algorithm.label(), sil_label(self.sil))
    }

    pub fn schedule(&self) -> ExplorationSchedule {
        self.exploration.unwrap_or(match self.algorithm {
            Algorithm::Pg => ExplorationSchedule::pg_default(),
            Algorithm::Ac => ExplorationSchedule::ac_default(),
        })
    }

    pub fn replay_mode(&self) -> ReplayMode {
        match self.sil {
            SilKind::Lstm => ReplayMode::Sequential,
            SilKind::Cnn => ReplayMode::Shuffled,
        }
    }

    fn base_spec(&self, mut spec: NetworkSpec) -> NetworkSpec {
        spec.cnn = self.cnn.clone();
        spec.lstm = self.lstm.clone();
        spec.dropout_rate = self.dropout_rate;
        spec
    }

    pub fn actor_spec(&self) -> NetworkSpec {
        self.base_spec(NetworkSpec::policy(self.sil, self.n))
    }

    pub fn critic_spec(&self) -> NetworkSpec {
        let mut spec = self.base_spec(NetworkSpec::q(self.sil, self.n));
        spec.action_channel = self.action_channel;
        spec
    }

    fn optimizer(&self, alpha: f64) -> OptimizerConfig {
        OptimizerConfig {
            alpha,
            weight_decay: self.weight_decay,
            weight_decay_mode: self.weight_decay_mode,
            grad_clip_norm: self.grad_clip_norm,
            ..OptimizerConfig::default()
        }
    }

    pub fn actor_optimizer(&self) -> OptimizerConfig {
        self.optimizer(self.alpha_actor)
    }

    pub fn critic_optimizer(&self) -> OptimizerConfig {
        self.optimizer(self.alpha_critic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.replay_capacity == 0 || self.update_every == 0 {
            return Err(Error::Config("batch size, replay capacity and update interval must be positive".into()));
        }
        if self.algorithm == Algorithm::Ac && self.batch_size > self.replay_capacity {
            return Err(Error::Config(format!(
                "batch size {} exceeds replay capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        self.schedule().validate()?;
        self.actor_optimizer().validate()?;
        self.critic_optimizer().validate()?;
        self.actor_spec().validate()?;
        self.critic_spec().validate()
    }
}

/// Everything needed to restore an agent's learned state exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub actor: ParameterSet,
    pub critic: Option<ParameterSet>,
    pub actor_step: u64,
    pub critic_step: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub epsilon: f64,
    pub steps: usize,
    pub updates: usize,
    pub reward_mean: f64,
}

pub trait Agent {
    fn label(&self) -> String;

    /// Reset the recurrent carry; call at the start of every episode.
    fn reset_episode(&mut self);

    /// Greedy action (no exploration).
    fn act(&mut self, state: &AgentState) -> Result<f64>;

    /// One exploratory pass over `env` with learning updates.
    fn train_epoch(&mut self, env: &mut TradingEnv<'_>) -> Result<EpochStats>;

    fn epochs_trained(&self) -> usize;

    fn snapshot(&self) -> AgentSnapshot;

    fn restore(&mut self, snapshot: &AgentSnapshot) -> Result<()>;

    fn checkpoint_entries(&self) -> Vec<CheckpointEntry>;

    fn load_checkpoint(&mut self, entries: &[CheckpointEntry]) -> Result<()>;

    /// Diagnostics accumulated since the last call.
    fn drain_diagnostics(&mut self) -> Vec<DiagnosticRecord>;
}

/// Build the agent selected by `cfg`.
pub fn build_agent(cfg: &AgentConfig, seed: u64) -> Result<Box<dyn Agent>> {
    Ok(match cfg.algorithm {
        Algorithm::Pg => Box::new(PgAgent::new(cfg.clone(), seed)?),
        Algorithm::Ac => Box::new(AcAgent::new(cfg.clone(), seed)?),
    })
}

/// LSTM carry that advances once per `period` steps.
///
/// Every step in a block of `period` steps starts from the same carry; at
/// the end of the block the carry becomes the state reached after the
/// block's last window. Acting and batched training both follow this rule.
#[derive(Debug, Clone)]
pub struct CarryClock {
    period: usize,
    count: usize,
    initial: Option<LstmCarry>,
    current: Option<LstmCarry>,
}

impl CarryClock {
    pub fn new(period: usize, initial: Option<LstmCarry>) -> Self {
        Self {
            period: period.max(1),
            count: 0,
            current: initial.clone(),
            initial,
        }
    }

    pub fn carry(&self) -> Option<&LstmCarry> {
        self.current.as_ref()
    }

    pub fn reset(&mut self) {
        self.count = 0;
        self.current = self.initial.clone();
    }

    pub fn advance(&mut self, latest: Option<LstmCarry>) {
        self.count += 1;
        if self.count.is_multiple_of(self.period) && latest.is_some() {
            self.current = latest;
        }
    }
}

/// The policy network with its optimizer state and acting carry.
#[derive(Debug, Clone)]
pub(crate) struct Actor {
    pub net: Network,
    pub opt: OptimizerConfig,
    pub step: u64,
    pub clock: CarryClock,
}

impl Actor {
    pub fn new(cfg: &AgentConfig, seed: u64) -> Result<Self> {
        let net = Network::new(cfg.actor_spec(), seed)?;
        let clock = CarryClock::new(cfg.batch_size, net.initial_carry());
        Ok(Self {
            net,
            opt: cfg.actor_optimizer(),
            step: 0,
            clock,
        })
    }

    /// Eval-mode mean action; advances the acting carry.
    pub fn mean(&mut self, state: &AgentState) -> Result<f64> {
        let out = self.net.predict(std::slice::from_ref(state), None, self.clock.carry())?;
        self.clock.advance(out.carry);
        Ok(out.values[0])
    }

    pub fn entry(&self, prefix: &str) -> CheckpointEntry {
        CheckpointEntry {
            prefix: prefix.into(),
            spec: self.net.spec().clone(),
            optimizer: self.opt.clone(),
            step: self.step,
            params: self.net.params().clone(),
        }
    }
}

pub(crate) fn find_entry<'a>(entries: &'a [CheckpointEntry], prefix: &str) -> Result<&'a CheckpointEntry> {
    entries
        .iter()
        .find(|e| e.prefix == prefix)
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no `{prefix}` network")))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// A fixed position, used for baselines and consistency checks.
#[derive(Debug, Clone)]
pub struct ConstantAgent {
    pub action: f64,
}

impl Agent for ConstantAgent {
    fn label(&self) -> String {
        format!("constant({})", self.action)
    }

    fn reset_episode(&mut self) {}

    fn act(&mut self, _: &AgentState) -> Result<f64> {
        Ok(self.action)
    }

    fn train_epoch(&mut self, env: &mut TradingEnv<'_>) -> Result<EpochStats> {
        let mut rewards = Vec::new();
        while !env.done() {
            rewards.push(env.step(self.action)?.1.r);
        }
        Ok(EpochStats {
            epoch: 0,
            epsilon: 0.0,
            steps: rewards.len(),
            updates: 0,
            reward_mean: mean(&rewards),
        })
    }

    fn epochs_trained(&self) -> usize {
        0
    }

    fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            actor: ParameterSet::new(),
            critic: None,
            actor_step: 0,
            critic_step: 0,
            epochs: 0,
        }
    }

    fn restore(&mut self, _: &AgentSnapshot) -> Result<()> {
        Ok(())
    }

    fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        Vec::new()
    }

    fn load_checkpoint(&mut self, _: &[CheckpointEntry]) -> Result<()> {
        Ok(())
    }

    fn drain_diagnostics(&mut self) -> Vec<DiagnosticRecord> {
        Vec::new()
    }
}
