//! Chronological splits, early-stopped training, walk-forward testing,
//! metrics and multi-seed reports.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod split;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{build_agent, diagnostics::write_jsonl, Agent, AgentConfig};
use crate::approx::{read_checkpoint, write_checkpoint, CheckpointEntry};
use crate::env::EnvConfig;
use crate::market_data::Bar;
use crate::{Error, Result};

pub use metrics::{compute_linear_returns, compute_metrics, equity_curve, max_drawdown, total_return, Metrics};
pub use report::{aggregate_runs, render_summary, write_equity_csv, BacktestReport, MetricSummary, RunReport, SummaryRow, BASELINE_LABEL};
pub use runner::{buy_and_hold, evaluate, evaluate_metrics, train_until_converged, walk_forward_test, TrainOutcome, WalkForward};
pub use split::{split, SplitConfig};

/// Everything one backtest needs besides the bars and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestJob {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub split: SplitConfig,
    pub bars_per_year: f64,
}

impl BacktestJob {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.env.reward.validate()?;
        self.split.validate()?;
        if self.agent.n != self.env.n {
            return Err(Error::Config(format!("agent window {} differs from environment window {}", self.agent.n, self.env.n)));
        }
        if !(self.bars_per_year > 0.0) {
            return Err(Error::Config("bars_per_year must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> String {
        self.agent.label()
    }

    /// File stem for a seeded run, e.g. `PG-CNN_ls0.1_seed3`.
    pub fn run_label(&self, seed: u64) -> String {
        format!("{}_ls{}_seed{seed}", self.model(), self.env.reward.lambda_sigma)
    }
}

/// Result of the training stage, stored next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    #[serde(with = "metrics::float_or_string")]
    pub best_valid_sharpe: f64,
    pub epochs_run: usize,
    /// Epoch counter of the selected agent; drives the refit exploration rate.
    pub agent_epochs: usize,
}

/// Output directory layout: `checkpoints/`, `equity/`, `diagnostics/`.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, dir: &str, name: String) -> Result<PathBuf> {
        let d = self.root.join(dir);
        fs::create_dir_all(&d)?;
        Ok(d.join(name))
    }

    pub fn checkpoint(&self, label: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{label}.ckpt"))
    }

    pub fn training_summary(&self, label: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{label}.json"))
    }

    pub fn equity_rel(label: &str) -> String {
        format!("equity/{label}.csv")
    }
}

fn load_training(out: &OutputDir, label: &str) -> Result<Option<(Vec<CheckpointEntry>, TrainingSummary)>> {
    let (ckpt, meta) = (out.checkpoint(label), out.training_summary(label));
    if !ckpt.exists() || !meta.exists() {
        return Ok(None);
    }
    let entries = read_checkpoint(BufReader::new(fs::File::open(ckpt)?))?;
    Ok(Some((entries, serde_json::from_str(&fs::read_to_string(meta)?)?)))
}

/// Fresh agent for `seed` holding the given checkpoint. Both the fresh and
/// the resumed pipeline go through here, so the test stage sees the same
/// parameters and random streams either way.
fn agent_from_checkpoint(job: &BacktestJob, seed: u64, entries: &[CheckpointEntry], epochs: usize) -> Result<Box<dyn Agent>> {
    let mut agent = build_agent(&job.agent, seed)?;
    agent.load_checkpoint(entries)?;
    let mut snap = agent.snapshot();
    snap.epochs = epochs;
    agent.restore(&snap)?;
    Ok(agent)
}

/// Build an agent for `seed` and train it on the train/valid segments, or
/// reload it when `resume` is set and a saved checkpoint exists.
pub fn train_seed(job: &BacktestJob, bars: &[Bar], seed: u64, out: Option<&OutputDir>, resume: bool) -> Result<(Box<dyn Agent>, TrainingSummary)> {
    job.validate()?;
    let label = job.run_label(seed);
    if let (Some(out), true) = (out, resume) {
        if let Some((entries, summary)) = load_training(out, &label)? {
            log::info!("{label}: resumed from checkpoint");
            return Ok((agent_from_checkpoint(job, seed, &entries, summary.agent_epochs)?, summary));
        }
    }
    let mut agent = build_agent(&job.agent, seed)?;
    let (train, valid, _) = split(bars.len(), &job.split);
    let outcome = train_until_converged(agent.as_mut(), bars, &train, &valid, job.env, &job.split, job.bars_per_year);
    let diagnostics = agent.drain_diagnostics();
    if let Some(out) = out {
        write_jsonl(BufWriter::new(fs::File::create(out.file("diagnostics", format!("{label}.jsonl"))?)?), &diagnostics)?;
    }
    let outcome = outcome?;
    let summary = TrainingSummary {
        best_epoch: outcome.best_epoch,
        best_valid_sharpe: outcome.best_sharpe,
        epochs_run: outcome.epochs.len(),
        agent_epochs: agent.epochs_trained(),
    };
    log::info!("{label}: best validation sharpe {:.4} at epoch {} of {}", summary.best_valid_sharpe, summary.best_epoch, summary.epochs_run);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &agent.checkpoint_entries())?;
    if let Some(out) = out {
        fs::write(out.file("checkpoints", format!("{label}.ckpt"))?, &buf)?;
        fs::write(out.training_summary(&label), serde_json::to_string_pretty(&summary)?)?;
    }
    let entries = read_checkpoint(buf.as_slice())?;
    Ok((agent_from_checkpoint(job, seed, &entries, summary.agent_epochs)?, summary))
}

fn finish_run(job: &BacktestJob, bars: &[Bar], label: &str, records: &[crate::env::StepRecord], out: Option<&OutputDir>) -> Result<(Metrics, Option<String>)> {
    let x = compute_linear_returns(records, job.env.reward.lambda_c);
    let metrics = compute_metrics(&x, job.bars_per_year)?;
    let path = match out {
        Some(out) => {
            let rel = OutputDir::equity_rel(label);
            let f = out.file("equity", format!("{label}.csv"))?;
            write_equity_csv(BufWriter::new(fs::File::create(f)?), bars, records, &x)?;
            Some(rel)
        }
        None => None,
    };
    Ok((metrics, path))
}

/// Full pipeline for one seed. Numerical failures are recorded in the report
/// rather than propagated.
pub fn run_seed(job: &BacktestJob, bars: &[Bar], seed: u64, out: Option<&OutputDir>, resume: bool) -> Result<RunReport> {
    let label = job.run_label(seed);
    let mut report = RunReport {
        seed: Some(seed),
        model: job.model(),
        lambda_sigma: job.env.reward.lambda_sigma,
        metrics: None,
        error: None,
        equity_curve_path: None,
        best_epoch: None,
        best_valid_sharpe: None,
        epochs_run: None,
    };
    let result = (|| {
        let (mut agent, summary) = train_seed(job, bars, seed, out, resume)?;
        report.best_epoch = Some(summary.best_epoch);
        report.best_valid_sharpe = Some(summary.best_valid_sharpe);
        report.epochs_run = Some(summary.epochs_run);
        let (train, _, test) = split(bars.len(), &job.split);
        let wf = walk_forward_test(
            agent.as_mut(),
            bars,
            &test,
            train.len(),
            job.env,
            job.split.refit_interval,
            job.split.refit_updates_bn,
        )?;
        finish_run(job, bars, &label, &wf.records, out)
    })();
    match result {
        Ok((metrics, path)) => {
            report.metrics = Some(metrics);
            report.equity_curve_path = path;
        }
        Err(e) if e.is_numerics_error() => {
            log::warn!("{label}: run failed: {e}");
            report.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Buy-and-hold over the test segment.
pub fn run_baseline(job: &BacktestJob, bars: &[Bar], out: Option<&OutputDir>) -> Result<RunReport> {
    let (_, _, test) = split(bars.len(), &job.split);
    let records = buy_and_hold(bars, &test, job.env)?;
    let (metrics, path) = finish_run(job, bars, "buy_and_hold", &records, out)?;
    Ok(RunReport {
        seed: None,
        model: BASELINE_LABEL.into(),
        lambda_sigma: job.env.reward.lambda_sigma,
        metrics: Some(metrics),
        error: None,
        equity_curve_path: path,
        best_epoch: None,
        best_valid_sharpe: None,
        epochs_run: None,
    })
}

/// Baseline plus one run per seed, aggregated.
pub fn run_backtest(job: &BacktestJob, bars: &[Bar], seeds: &[u64], out: Option<&OutputDir>, resume: bool, config: serde_json::Value) -> Result<BacktestReport> {
    job.validate()?;
    let mut runs = vec![run_baseline(job, bars, out)?];
    for &seed in seeds {
        runs.push(run_seed(job, bars, seed, out, resume)?);
    }
    Ok(BacktestReport::new(config, runs))
}

/// Reads a report written by [`run_backtest`].
pub fn read_report(path: &Path) -> Result<BacktestReport> {
    BacktestReport::from_json(&fs::read_to_string(path)?)
}
