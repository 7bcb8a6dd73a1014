//! Gaussian policy gradient (REINFORCE on contiguous minibatches).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::exploration::{gaussian_action, gaussian_log_density};
use super::{find_entry, mean, Actor, Agent, AgentConfig, AgentSnapshot, DiagnosticRecord, EpochStats, ExplorationSchedule};
use crate::approx::{adam_step, CheckpointEntry, LstmCarry, Mode, Network};
use crate::env::{AgentState, TradingEnv};
use crate::{Error, Result};

/// Fill `net`'s gradients with those of `-Σ r_t log π(a_t | s_t)` and return that loss.
///
/// `raw_actions` are the unclipped Gaussian samples. When `behavior_means`
/// is given, the score `(a - μ) / ε²` uses the means the samples were drawn
/// around, and only `∇μ` comes from the forward pass in `mode`. Without it
/// the forward pass supplies both, which is the exact gradient in `mode`.
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient(
    net: &mut Network,
    states: &[AgentState],
    raw_actions: &[f64],
    behavior_means: Option<&[f64]>,
    rewards: &[f64],
    epsilon: f64,
    carry: Option<&LstmCarry>,
    mode: Mode,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidUpdate(format!("policy gradient needs epsilon > 0, got {epsilon}")));
    }
    if raw_actions.len() != states.len() || rewards.len() != states.len() || behavior_means.is_some_and(|m| m.len() != states.len()) {
        return Err(Error::Spec("states, actions, means and rewards must have equal length".into()));
    }
    net.params_mut().zero_grad();
    let mu = net.forward(states, None, mode, carry)?.values;
    let score_means = behavior_means.unwrap_or(&mu);
    let var = epsilon * epsilon;
    let mut loss = 0.0;
    let mut d_mu = Vec::with_capacity(mu.len());
    for ((&m, &a), &r) in score_means.iter().zip(raw_actions).zip(rewards) {
        loss -= r * gaussian_log_density(a, m, epsilon);
        d_mu.push(-r * (a - m) / var);
    }
    net.backward(&d_mu)?;
    if !loss.is_finite() {
        return Err(Error::Numerics(format!("policy-gradient loss is {loss}")));
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct PgAgent {
    cfg: AgentConfig,
    actor: Actor,
    schedule: ExplorationSchedule,
    noise: ChaCha8Rng,
    epochs: usize,
    diagnostics: Vec<DiagnosticRecord>,
}

impl PgAgent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(2);
        Ok(Self {
            actor: Actor::new(&cfg, seed)?,
            schedule: cfg.schedule(),
            cfg,
            noise,
            epochs: 0,
            diagnostics: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.actor.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.actor.net
    }

    /// One ascent step on a recorded minibatch, with `means` the greedy
    /// means the actions were sampled around. Returns the loss and gradient norm.
    pub fn update(&mut self, states: &[AgentState], raw_actions: &[f64], means: &[f64], rewards: &[f64], epsilon: f64, carry: Option<&LstmCarry>) -> Result<(f64, f64)> {
        let loss = policy_gradient(&mut self.actor.net, states, raw_actions, Some(means), rewards, epsilon, carry, Mode::Train)?;
        self.actor.step += 1;
        let stats = adam_step(self.actor.net.params_mut(), &self.actor.opt, self.actor.step)?;
        Ok((loss, stats.grad_norm))
    }
}

impl Agent for PgAgent {
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
        let batch = self.cfg.batch_size;
        let (mut states, mut raws, mut means, mut rewards) = (Vec::with_capacity(batch), Vec::with_capacity(batch), Vec::with_capacity(batch), Vec::with_capacity(batch));
        let mut all_rewards = Vec::with_capacity(env.remaining());
        let mut updates = 0;
        let mut chunk_carry = self.actor.clock.carry().cloned();
        let mut state = env.state()?;
        while !env.done() {
            let mu = self.actor.mean(&state)?;
            let (raw, action) = gaussian_action(mu, epsilon, &mut self.noise);
            let (next, record) = env.step(action)?;
            states.push(state);
            raws.push(raw);
            means.push(mu);
            rewards.push(record.r);
            all_rewards.push(record.r);
            if states.len() == batch || env.done() {
                let (loss, grad_norm) = self.update(&states, &raws, &means, &rewards, epsilon, chunk_carry.as_ref())?;
                updates += 1;
                self.diagnostics.push(DiagnosticRecord {
                    epoch,
                    step: self.actor.step,
                    loss_actor: loss,
                    loss_critic: None,
                    epsilon,
                    grad_norm,
                    reward_mean: mean(&rewards),
                });
                states.clear();
                raws.clear();
                means.clear();
                rewards.clear();
                chunk_carry = self.actor.clock.carry().cloned();
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
            steps: all_rewards.len(),
            updates,
            reward_mean: mean(&all_rewards),
        })
    }

    fn epochs_trained(&self) -> usize {
        self.epochs
    }

    fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            actor: self.actor.net.params().clone(),
            critic: None,
            actor_step: self.actor.step,
            critic_step: 0,
            epochs: self.epochs,
        }
    }

    fn restore(&mut self, snapshot: &AgentSnapshot) -> Result<()> {
        self.actor.net.set_params(snapshot.actor.clone())?;
        self.actor.step = snapshot.actor_step;
        self.epochs = snapshot.epochs;
        Ok(())
    }

    fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        vec![self.actor.entry("actor")]
    }

    fn load_checkpoint(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let e = find_entry(entries, "actor")?;
        if &e.spec != self.actor.net.spec() {
            return Err(Error::Checkpoint("actor spec does not match the configuration".into()));
        }
        self.actor.net.set_params(e.params.clone())?;
        self.actor.step = e.step;
        Ok(())
    }

    fn drain_diagnostics(&mut self) -> Vec<DiagnosticRecord> {
        std::mem::take(&mut self.diagnostics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::gradcheck::relative_error;
    use crate::approx::SilKind;
    use crate::env::EnvConfig;
    use crate::market_data::Bar;
    use rand::Rng;

    fn small_cfg(n: usize) -> AgentConfig {
        let mut cfg = AgentConfig::new(super::super::Algorithm::Pg, SilKind::Cnn, n);
        cfg.cnn.feature_maps = 4;
        cfg
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> AgentState {
        AgentState::new((0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect(), n, rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn log_density_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut agent = PgAgent::new(small_cfg(6), 1).unwrap();
        let net = agent.network_mut();
        let state = random_state(&mut rng, 6);
        let (a, eps) = (0.4, 0.3);
        // With reward -1 the loss is log π itself.
        policy_gradient(net, std::slice::from_ref(&state), &[a], None, &[-1.0], eps, None, Mode::Eval).unwrap();
        let analytic = net.params().by_name("head.weight").unwrap().grad.clone();
        let mu = net.predict(std::slice::from_ref(&state), None, None).unwrap().values[0];
        let d_mu = (a - mu) / (eps * eps);
        let h = 1e-6;
        for i in 0..analytic.len() {
            let w = net.params().by_name("head.weight").unwrap().value[i];
            let mut eval = |v: f64| {
                net.params_mut().by_name_mut("head.weight").unwrap().value[i] = v;
                let m = net.predict(std::slice::from_ref(&state), None, None).unwrap().values[0];
                (gaussian_log_density(a, m, eps), m)
            };
            let ((lp_up, mu_up), (lp_down, mu_down)) = (eval(w + h), eval(w - h));
            net.params_mut().by_name_mut("head.weight").unwrap().value[i] = w;
            let numeric = (lp_up - lp_down) / (2.0 * h);
            let closed_form = d_mu * (mu_up - mu_down) / (2.0 * h);
            assert!(relative_error(analytic[i], numeric, 1e-4) < 1e-5, "coord {i}");
            assert!(relative_error(analytic[i], closed_form, 1e-4) < 1e-5, "coord {i}");
        }
    }

    #[test]
    fn zero_rewards_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut cfg = small_cfg(6);
        cfg.weight_decay = 0.0;
        let mut agent = PgAgent::new(cfg, 2).unwrap();
        let states: Vec<_> = (0..4).map(|_| random_state(&mut rng, 6)).collect();
        agent.network_mut().forward(&states, None, Mode::Train, None).unwrap();
        agent.network_mut().backward(&[0.0; 4]).unwrap();
        let before: Vec<Vec<f64>> = agent.network().params().iter().filter(|p| p.trainable).map(|p| p.value.clone()).collect();
        agent.update(&states, &[0.1, 0.2, -0.3, 0.0], &[0.0; 4], &[0.0; 4], 0.2, None).unwrap();
        let after: Vec<Vec<f64>> = agent.network().params().iter().filter(|p| p.trainable).map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn zero_epsilon_update_is_invalid() {
        let mut agent = PgAgent::new(small_cfg(4), 0).unwrap();
        let s = AgentState::new(vec![0.0; 12], 4, 0.0).unwrap();
        assert!(matches!(agent.update(&[s], &[0.0], &[0.0], &[1.0], 0.0, None), Err(Error::InvalidUpdate(_))));
    }

    #[test]
    fn learns_sign_on_two_state_bandit() {
        // Reward +a on the up-trend state and -a on the down-trend state.
        let n = 6;
        let up = AgentState::new([vec![1.0; n], vec![1.2; n], vec![0.8; n]].concat(), n, 0.0).unwrap();
        let down = AgentState::new([vec![-1.0; n], vec![-0.8; n], vec![-1.2; n]].concat(), n, 0.0).unwrap();
        let mut correct = 0;
        for seed in 0..10 {
            let mut cfg = small_cfg(n);
            cfg.alpha_actor = 1e-3;
            let mut agent = PgAgent::new(cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let eps = 0.3;
            for _ in 0..500 {
                let mut states = Vec::new();
                let mut raws = Vec::new();
                let mut means = Vec::new();
                let mut rewards = Vec::new();
                for k in 0..8 {
                    let (s, sign) = if k % 2 == 0 { (&up, 1.0) } else { (&down, -1.0) };
                    let mu = agent.network_mut().predict(std::slice::from_ref(s), None, None).unwrap().values[0];
                    let (raw, a) = gaussian_action(mu, eps, &mut rng);
                    states.push(s.clone());
                    raws.push(raw);
                    means.push(mu);
                    rewards.push(sign * a);
                }
                agent.update(&states, &raws, &means, &rewards, eps, None).unwrap();
            }
            let net = agent.network_mut();
            let mu_up = net.predict(std::slice::from_ref(&up), None, None).unwrap().values[0];
            let mu_down = net.predict(std::slice::from_ref(&down), None, None).unwrap().values[0];
            if mu_up > 0.0 && mu_down < 0.0 {
                correct += 1;
            }
        }
        assert!(correct >= 9, "{correct}/10 seeds learned both signs");
    }

    #[test]
    fn constant_reward_estimator_shrinks_like_inverse_sqrt() {
        // Zero decision weights and a zero previous action give a state-independent mean of 0.
        let mut agent = PgAgent::new(small_cfg(4), 3).unwrap();
        let net = agent.network_mut();
        net.params_mut().by_name_mut("head.weight").unwrap().value.iter_mut().for_each(|w| *w = 0.0);
        let state = AgentState::new((0..12).map(|i| (i as f64 * 0.7).sin()).collect(), 4, 0.0).unwrap();
        let (g, _) = net.forward_sil(std::slice::from_ref(&state), None, Mode::Eval, None).unwrap();
        let (eps, c) = (0.2, 1.5);
        // Per-sample estimate is -c z / eps * [g, 0], so its norm has std c / eps * |g|.
        let per_sample_sd = c / eps * g.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for &batches in &[100usize, 1000, 10_000] {
            let mut acc = vec![0.0; g.data.len() + 1];
            for _ in 0..batches {
                let (raw, _) = gaussian_action(0.0, eps, &mut rng);
                policy_gradient(net, std::slice::from_ref(&state), &[raw], None, &[c], eps, None, Mode::Eval).unwrap();
                for (a, d) in acc.iter_mut().zip(&net.params().by_name("head.weight").unwrap().grad) {
                    *a += d;
                }
                assert_eq!(net.params().grad_norm(), net.params().by_name("head.weight").unwrap().grad.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
            let norm = acc.iter().map(|a| (a / batches as f64).powi(2)).sum::<f64>().sqrt();
            // norm * sqrt(N) / sd is |N(0, 1)|; 4 sd bounds it with probability > 0.9999.
            assert!(norm * (batches as f64).sqrt() < 4.0 * per_sample_sd, "N={batches}: {norm}");
        }
    }

    #[test]
    fn training_epoch_runs_and_is_deterministic() {
        let bars: Vec<Bar> = (0..90)
            .map(|i| Bar::flat(i as i64, 100.0 * (1.0 + 0.05 * (i as f64 / 5.0).sin())))
            .map(|mut b| {
                b.high = b.close * 1.001;
                b.low = b.close * 0.999;
                b
            })
            .collect();
        let env_cfg = EnvConfig {
            n: 6,
            reward: crate::env::RewardConfig {
                lookback: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let run = || {
            let mut cfg = small_cfg(6);
            cfg.batch_size = 16;
            let mut agent = PgAgent::new(cfg, 7).unwrap();
            let mut env = TradingEnv::new(&bars, env_cfg, 0, bars.len()).unwrap();
            let stats = agent.train_epoch(&mut env).unwrap();
            (stats, agent.snapshot(), agent.drain_diagnostics())
        };
        let (a, sa, da) = run();
        let (b, sb, db) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(da, db);
        assert_eq!(a.steps, 90 - 10 - 1);
        assert_eq!(a.updates, a.steps.div_ceil(16));
    }
}
