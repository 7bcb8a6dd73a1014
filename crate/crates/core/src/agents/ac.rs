//! Deterministic actor-critic with a replay memory.
//!
//! The critic regresses on the immediate reward; there is no bootstrap term
//! and therefore no target network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::exploration::uniform_action;
use super::replay::{ReplayMemory, Transition};
use super::{find_entry, mean, Actor, Agent, AgentConfig, AgentSnapshot, DiagnosticRecord, EpochStats, ExplorationSchedule};
use crate::approx::{adam_step, CheckpointEntry, LstmCarry, Mode, Network, OptimizerConfig};
use crate::env::{AgentState, TradingEnv};
use crate::{Error, Result};

/// Fill the critic's gradients with those of `mean (Q(s, a) - r)^2`; returns the loss.
pub fn critic_regression(critic: &mut Network, states: &[AgentState], actions: &[f64], rewards: &[f64], carry: Option<&LstmCarry>, mode: Mode) -> Result<(f64, Option<LstmCarry>)> {
    if rewards.len() != states.len() {
        return Err(Error::Spec("one reward per state required".into()));
    }
    critic.params_mut().zero_grad();
    let out = critic.forward(states, Some(actions), mode, carry)?;
    let b = states.len() as f64;
    let mut loss = 0.0;
    let d: Vec<f64> = out
        .values
        .iter()
        .zip(rewards)
        .map(|(q, r)| {
            loss += (q - r) * (q - r) / b;
            2.0 * (q - r) / b
        })
        .collect();
    critic.backward(&d)?;
    if !loss.is_finite() {
        return Err(Error::Numerics(format!("critic loss is {loss}")));
    }
    Ok((loss, out.carry))
}

/// Fill the actor's gradients with those of `-mean Q(s, μ(s))`; returns `mean Q(s, μ(s))`.
///
/// The critic runs in eval mode and its gradients are discarded.
pub fn deterministic_policy_gradient(
    actor: &mut Network,
    critic: &mut Network,
    states: &[AgentState],
    actor_mode: Mode,
    actor_carry: Option<&LstmCarry>,
    critic_carry: Option<&LstmCarry>,
) -> Result<(f64, Option<LstmCarry>)> {
    actor.params_mut().zero_grad();
    let out = actor.forward(states, None, actor_mode, actor_carry)?;
    let q = critic.forward(states, Some(&out.values), Mode::Eval, critic_carry)?.values;
    let b = states.len() as f64;
    let grads = critic.backward(&vec![-1.0 / b; states.len()])?;
    critic.params_mut().zero_grad();
    actor.backward(&grads.action)?;
    let objective = q.iter().sum::<f64>() / b;
    if !objective.is_finite() {
        return Err(Error::Numerics(format!("actor objective is {objective}")));
    }
    Ok((objective, out.carry))
}

#[derive(Debug, Clone)]
struct Critic {
    net: Network,
    opt: OptimizerConfig,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct AcAgent {
    cfg: AgentConfig,
    actor: Actor,
    critic: Critic,
    memory: ReplayMemory,
    schedule: ExplorationSchedule,
    noise: ChaCha8Rng,
    sampler: ChaCha8Rng,
    actor_train_carry: Option<LstmCarry>,
    critic_train_carry: Option<LstmCarry>,
    epochs: usize,
    diagnostics: Vec<DiagnosticRecord>,
}

/// Losses and gradient norms of one replay update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcUpdate {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
}

impl AcAgent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let critic_net = Network::new(cfg.critic_spec(), seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(2);
        let mut sampler = ChaCha8Rng::seed_from_u64(seed);
        sampler.set_stream(3);
        let actor = Actor::new(&cfg, seed)?;
        Ok(Self {
            actor_train_carry: actor.net.initial_carry(),
            critic_train_carry: critic_net.initial_carry(),
            actor,
            critic: Critic {
                net: critic_net,
                opt: cfg.critic_optimizer(),
                step: 0,
            },
            memory: ReplayMemory::new(cfg.replay_capacity, cfg.replay_mode()),
            schedule: cfg.schedule(),
            cfg,
            noise,
            sampler,
            epochs: 0,
            diagnostics: Vec::new(),
        })
    }

    pub fn actor(&self) -> &Network {
        &self.actor.net
    }

    pub fn actor_mut(&mut self) -> &mut Network {
        &mut self.actor.net
    }

    pub fn critic(&self) -> &Network {
        &self.critic.net
    }

    pub fn critic_mut(&mut self) -> &mut Network {
        &mut self.critic.net
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut ReplayMemory {
        &mut self.memory
    }

    /// Critic step then actor step on the given transitions.
    pub fn update_on(&mut self, batch: &[&Transition]) -> Result<AcUpdate> {
        let states: Vec<AgentState> = batch.iter().map(|t| t.state.clone()).collect();
        let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let (critic_loss, critic_carry) = critic_regression(&mut self.critic.net, &states, &actions, &rewards, self.critic_train_carry.as_ref(), Mode::Train)?;
        self.critic.step += 1;
        let critic_stats = adam_step(self.critic.net.params_mut(), &self.critic.opt, self.critic.step)?;
        let (actor_objective, actor_carry) = deterministic_policy_gradient(
            &mut self.actor.net,
            &mut self.critic.net,
            &states,
            Mode::Train,
            self.actor_train_carry.as_ref(),
            self.critic_train_carry.as_ref(),
        )?;
        self.actor.step += 1;
        let actor_stats = adam_step(self.actor.net.params_mut(), &self.actor.opt, self.actor.step)?;
        if critic_carry.is_some() {
            self.critic_train_carry = critic_carry;
            self.actor_train_carry = actor_carry;
        }
        Ok(AcUpdate {
            critic_loss,
            actor_objective,
            critic_grad_norm: critic_stats.grad_norm,
            actor_grad_norm: actor_stats.grad_norm,
        })
    }

    /// Sample a batch from memory and update both networks.
    pub fn update(&mut self) -> Result<AcUpdate> {
        let idx = self.memory.sample_indices(self.cfg.batch_size, &mut self.sampler)?;
        let items: Vec<Transition> = {
            let all: Vec<&Transition> = self.memory.iter().collect();
            idx.into_iter().map(|i| all[i].clone()).collect()
        };
        let refs: Vec<&Transition> = items.iter().collect();
        self.update_on(&refs)
    }
}

impl Agent for AcAgent {
    fn label(&self) -> String {
        self.cfg.label()
    }

    fn reset_episode(&mut self) {
        self.actor.clock.reset();
    }

    fn act(&mut self, state: &AgentState) -> Result<f64> {
        Ok(self.actor.mean(state)?.clamp(-1.0, 1.0))
    }

    fn train_epoch(&mut self, env: &mut TradingEnv<'_>) -> Result<EpochStats> {
        let epoch = self.epochs;
        let epsilon = self.schedule.epsilon(epoch);
        self.reset_episode();
        self.actor_train_carry = self.actor.net.initial_carry();
        self.critic_train_carry = self.critic.net.initial_carry();
        let mut rewards = Vec::with_capacity(env.remaining());
        let mut updates = 0;
        let mut state = env.state()?;
        while !env.done() {
            let mu = self.actor.mean(&state)?;
            let action = uniform_action(mu, epsilon, &mut self.noise);
            let (next, record) = env.step(action)?;
            rewards.push(record.r);
            self.memory.push(Transition {
                state,
                action,
                reward: record.r,
                next_state: next.clone(),
                step: record.t,
            });
            if rewards.len() % self.cfg.update_every == 0 && self.memory.len() >= self.cfg.batch_size {
                let u = self.update()?;
                updates += 1;
                let tail = &rewards[rewards.len().saturating_sub(self.cfg.update_every)..];
                self.diagnostics.push(DiagnosticRecord {
                    epoch,
                    step: self.actor.step,
                    loss_actor: -u.actor_objective,
                    loss_critic: Some(u.critic_loss),
                    epsilon,
                    grad_norm: u.actor_grad_norm,
                    reward_mean: mean(tail),
                });
            }
            match next {
                Some(s) => state = s,
                None => break,
            }
        }
        self.epochs += 1;
        Ok(EpochStats {
            epoch,
            epsilon,
            steps: rewards.len(),
            updates,
            reward_mean: mean(&rewards),
        })
    }

    fn epochs_trained(&self) -> usize {
        self.epochs
    }

    fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            actor: self.actor.net.params().clone(),
            critic: Some(self.critic.net.params().clone()),
            actor_step: self.actor.step,
            critic_step: self.critic.step,
            epochs: self.epochs,
        }
    }

    fn restore(&mut self, snapshot: &AgentSnapshot) -> Result<()> {
        let critic = snapshot.critic.clone().ok_or_else(|| Error::State("snapshot has no critic".into()))?;
        self.actor.net.set_params(snapshot.actor.clone())?;
        self.critic.net.set_params(critic)?;
        self.actor.step = snapshot.actor_step;
        self.critic.step = snapshot.critic_step;
        self.epochs = snapshot.epochs;
        Ok(())
    }

    fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        vec![
            self.actor.entry("actor"),
            CheckpointEntry {
                prefix: "critic".into(),
                spec: self.critic.net.spec().clone(),
                optimizer: self.critic.opt.clone(),
                step: self.critic.step,
                params: self.critic.net.params().clone(),
            },
        ]
    }

    fn load_checkpoint(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let a = find_entry(entries, "actor")?;
        let c = find_entry(entries, "critic")?;
        if &a.spec != self.actor.net.spec() || &c.spec != self.critic.net.spec() {
            return Err(Error::Checkpoint("network specs do not match the configuration".into()));
        }
        self.actor.net.set_params(a.params.clone())?;
        self.critic.net.set_params(c.params.clone())?;
        self.actor.step = a.step;
        self.critic.step = c.step;
        Ok(())
    }

    fn drain_diagnostics(&mut self) -> Vec<DiagnosticRecord> {
        std::mem::take(&mut self.diagnostics)
    }
}
