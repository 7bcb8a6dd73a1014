//! Greedy evaluation, early-stopped training and walk-forward testing.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_linear_returns, compute_metrics, Metrics};
use super::split::SplitConfig;
use crate::agents::{Agent, AgentSnapshot, ConstantAgent, EpochStats};
use crate::env::{EnvConfig, StepRecord, TradingEnv};
use crate::market_data::Bar;
use crate::{Error, Result};

/// Environment whose decisions realize the returns of the bars in `segment`.
///
/// The decision for bar `i`'s return is taken at `i - 1`, so the first
/// decision may read the bar just before the segment (already in the past).
pub fn segment_env<'a>(bars: &'a [Bar], segment: &Range<usize>, cfg: EnvConfig) -> Result<TradingEnv<'a>> {
    TradingEnv::new(&bars[..segment.end], cfg, segment.start.saturating_sub(1), segment.end)
}

/// Greedy pass over a segment without learning.
pub fn evaluate(agent: &mut dyn Agent, bars: &[Bar], segment: &Range<usize>, cfg: EnvConfig) -> Result<Vec<StepRecord>> {
    let mut env = segment_env(bars, segment, cfg)?;
    agent.reset_episode();
    let mut records = Vec::with_capacity(env.remaining());
    let mut state = env.state()?;
    while !env.done() {
        let action = agent.act(&state)?;
        let (next, record) = env.step(action)?;
        records.push(record);
        match next {
            Some(s) => state = s,
            None => break,
        }
    }
    Ok(records)
}

pub fn evaluate_metrics(agent: &mut dyn Agent, bars: &[Bar], segment: &Range<usize>, cfg: EnvConfig, bars_per_year: f64) -> Result<Metrics> {
    let records = evaluate(agent, bars, segment, cfg)?;
    compute_metrics(&compute_linear_returns(&records, cfg.reward.lambda_c), bars_per_year)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub epoch: usize,
    #[serde(with = "super::metrics::float_or_string")]
    pub sharpe: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: AgentSnapshot,
    pub best_epoch: usize,
    pub best_sharpe: f64,
    pub evaluations: Vec<Evaluation>,
    pub epochs: Vec<EpochStats>,
}

/// Train on `train`, evaluate greedy validation Sharpe at the start and every
/// `eval_every` epochs, keep the best (first wins ties), and stop after
/// `patience` evaluations without improvement. The agent ends in the best state.
pub fn train_until_converged(
    agent: &mut dyn Agent,
    bars: &[Bar],
    train: &Range<usize>,
    valid: &Range<usize>,
    env_cfg: EnvConfig,
    split: &SplitConfig,
    bars_per_year: f64,
) -> Result<TrainOutcome> {
    let start_epoch = agent.epochs_trained();
    let sharpe = evaluate_metrics(agent, bars, valid, env_cfg, bars_per_year)?.sharpe;
    let mut outcome = TrainOutcome {
        best: agent.snapshot(),
        best_epoch: 0,
        best_sharpe: sharpe,
        evaluations: vec![Evaluation { epoch: 0, sharpe }],
        epochs: Vec::new(),
    };
    let mut stale = 0;
    for epoch in 1..=split.max_epochs {
        let mut env = segment_env(bars, train, env_cfg)?;
        outcome.epochs.push(agent.train_epoch(&mut env)?);
        if epoch % split.eval_every != 0 {
            continue;
        }
        let sharpe = evaluate_metrics(agent, bars, valid, env_cfg, bars_per_year)?.sharpe;
        log::debug!("{} epoch {} validation sharpe {sharpe:.4}", agent.label(), start_epoch + epoch);
        outcome.evaluations.push(Evaluation { epoch, sharpe });
        if sharpe > outcome.best_sharpe {
            outcome.best = agent.snapshot();
            outcome.best_epoch = epoch;
            outcome.best_sharpe = sharpe;
            stale = 0;
        } else {
            stale += 1;
            if stale >= split.patience {
                break;
            }
        }
    }
    agent.restore(&outcome.best)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct Refit {
    /// Decision index at which the refit happened.
    pub at: usize,
    /// Bars the refit could read (all indices are below `at`).
    pub window: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct WalkForward {
    pub records: Vec<StepRecord>,
    pub refits: Vec<Refit>,
}

fn keep_buffers(before: &AgentSnapshot, after: &mut AgentSnapshot) {
    let pairs = std::iter::once((&before.actor, &mut after.actor)).chain(before.critic.iter().zip(after.critic.iter_mut()));
    for (b, a) in pairs {
        for (pb, pa) in b.iter().zip(a.iter_mut()) {
            if !pb.trainable {
                pa.value.clone_from(&pb.value);
            }
        }
    }
}

/// Greedy test over `test`; every `refit_interval` decisions the agent runs
/// one training epoch over the `train_len` bars preceding the decision index.
pub fn walk_forward_test(
    agent: &mut dyn Agent,
    bars: &[Bar],
    test: &Range<usize>,
    train_len: usize,
    env_cfg: EnvConfig,
    refit_interval: Option<usize>,
    refit_updates_bn: bool,
) -> Result<WalkForward> {
    let mut env = segment_env(bars, test, env_cfg)?;
    agent.reset_episode();
    let mut records = Vec::with_capacity(env.remaining());
    let mut refits = Vec::new();
    while !env.done() {
        let t = env.t();
        if let Some(k) = refit_interval {
            if !records.is_empty() && records.len() % k == 0 {
                let window = t.saturating_sub(train_len)..t;
                match TradingEnv::new(&bars[..t], env_cfg, window.start, t) {
                    Ok(mut refit_env) => {
                        let before = agent.snapshot();
                        agent.train_epoch(&mut refit_env)?;
                        if !refit_updates_bn {
                            let mut after = agent.snapshot();
                            keep_buffers(&before, &mut after);
                            agent.restore(&after)?;
                        }
                        refits.push(Refit { at: t, window });
                        agent.reset_episode();
                    }
                    Err(Error::NotWarmedUp(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let state = env.state()?;
        let action = agent.act(&state)?;
        records.push(env.step(action)?.1);
    }
    Ok(WalkForward { records, refits })
}

/// Constant full-long position from a flat start, through the generic path.
pub fn buy_and_hold(bars: &[Bar], test: &Range<usize>, env_cfg: EnvConfig) -> Result<Vec<StepRecord>> {
    evaluate(&mut ConstantAgent { action: 1.0 }, bars, test, env_cfg)
}
