//! `vbt`: synthetic markets, dollar-bar sampling, training and backtests.
//!
//! Settings resolve as command-line flags over the `--config` file over the
//! built-in defaults. Log verbosity is read from `VBT_LOG`.

use std::fs;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vbt_core::agents::Algorithm;
use vbt_core::backtest::{aggregate_runs, read_report, render_summary, run_backtest, train_seed, BacktestReport, OutputDir};
use vbt_core::market_data::{parse_ticks, read_bars_csv, sample_bars, write_bars_csv, write_ticks_binary, write_ticks_csv, TickFormat, TICK_BINARY_MAGIC};
use vbt_core::synth::generate;
use vbt_core::{Bar, Error, MarketKind, Result, RunConfig, SilKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vbt", version, about = "Risk- and cost-sensitive trading agents on dollar-volume bars")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (file for synth/bars/report, directory for train/backtest).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// `pg` or `ac`.
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Option<Algorithm>,
    /// `cnn` or `lstm`.
    #[arg(long, value_parser = parse_sil)]
    pub sil: Option<SilKind>,
    /// Variance penalty weight.
    #[arg(long)]
    pub lambda_sigma: Option<f64>,
    /// Proportional transaction cost.
    #[arg(long)]
    pub lambda_c: Option<f64>,
    /// Run seeds 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Target bars per day.
    #[arg(long)]
    pub tgt: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Bar CSV; overrides `data.bars`.
    #[arg(long)]
    pub bars: Option<PathBuf>,
    /// Tick file sampled on the fly when no bar file is given.
    #[arg(long)]
    pub ticks: Option<PathBuf>,
    /// Skip malformed tick rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Reuse checkpoints found in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tick stream and its metadata sidecar.
    Synth {
        /// `gbm`, `sinusoidal-trend` or `regime-switch`.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<MarketKind>,
        #[arg(long)]
        days: Option<usize>,
        /// Write the binary tick format instead of CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Sample dollar-volume bars from a tick file.
    Bars {
        /// Tick file (CSV or binary, detected from its header).
        ticks: PathBuf,
        #[arg(long)]
        tgt: Option<f64>,
        #[arg(long)]
        lenient: bool,
    },
    /// Train agents and write checkpoints.
    Train(RunFlags),
    /// Train, walk-forward test and write a report.
    Backtest(RunFlags),
    /// Aggregate one or more reports into a results table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    match s.to_ascii_uppercase().as_str() {
        "PG" => Ok(Algorithm::Pg),
        "AC" => Ok(Algorithm::Ac),
        _ => Err(format!("unknown algorithm {s:?} (expected PG or AC)")),
    }
}

fn parse_sil(s: &str) -> std::result::Result<SilKind, String> {
    match s.to_ascii_uppercase().as_str() {
        "CNN" => Ok(SilKind::Cnn),
        "LSTM" => Ok(SilKind::Lstm),
        _ => Err(format!("unknown state-input layer {s:?} (expected CNN or LSTM)")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<MarketKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown market kind {s:?} (expected gbm, sinusoidal-trend or regime-switch)"))
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerics(_) => EXIT_NUMERICS,
        Error::Config(_) | Error::Spec(_) | Error::InvalidUpdate(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Defaults, then the config file, then command-line overrides.
pub fn resolve_config(common: &Common, flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(a) = flags.algorithm {
        cfg.algorithm = a;
    }
    if let Some(s) = flags.sil {
        cfg.sil = s;
    }
    if let Some(l) = flags.lambda_sigma {
        cfg.lambda_sigma = l;
    }
    if let Some(l) = flags.lambda_c {
        cfg.lambda_c = l;
    }
    if let Some(t) = flags.tgt {
        cfg.tgt = t;
    }
    if let Some(m) = flags.max_epochs {
        cfg.backtest.max_epochs = m;
    }
    if let Some(k) = flags.seeds {
        cfg.seeds = (0..k).collect();
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
        cfg.synth.seed = s;
    }
    if let Some(b) = &flags.bars {
        cfg.data.bars = Some(b.clone());
    }
    if let Some(t) = &flags.ticks {
        cfg.data.ticks = Some(t.clone());
    }
    if let Some(o) = &common.out {
        cfg.data.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = cli.common;
    match cli.command {
        Command::Synth { kind, days, binary } => cmd_synth(&common, kind, days, binary),
        Command::Bars { ticks, tgt, lenient } => {
            let flags = RunFlags { tgt, ..RunFlags::default() };
            let cfg = resolve_config(&common, &flags)?;
            let out = common.out.clone().ok_or_else(|| Error::Config("bars needs --out".into()))?;
            cmd_bars(&cfg, &ticks, &out, lenient)
        }
        Command::Train(flags) => cmd_train(&resolve_config(&common, &flags)?, flags.lenient, flags.resume),
        Command::Backtest(flags) => cmd_backtest(&resolve_config(&common, &flags)?, flags.lenient, flags.resume),
        Command::Report { reports } => cmd_report(&reports, common.out.as_deref()),
    }
}

fn cmd_synth(common: &Common, kind: Option<MarketKind>, days: Option<usize>, binary: bool) -> Result<()> {
    let cfg = resolve_config(common, &RunFlags::default())?;
    let mut spec = cfg.synth;
    if let Some(k) = kind {
        spec.kind = k;
    }
    if let Some(d) = days {
        spec.length_days = d;
    }
    let out = common.out.clone().ok_or_else(|| Error::Config("synth needs --out".into()))?;
    let market = generate(&spec)?;
    let w = BufWriter::new(fs::File::create(&out)?);
    if binary {
        write_ticks_binary(w, &market.ticks)?;
    } else {
        write_ticks_csv(w, &market.ticks)?;
    }
    let mut meta = out.clone().into_os_string();
    meta.push(".meta.json");
    fs::write(&meta, serde_json::to_string_pretty(&market.metadata)? + "\n")?;
    log::info!("wrote {} ticks to {}", market.ticks.len(), out.display());
    Ok(())
}

fn read_ticks(path: &Path, lenient: bool) -> Result<Vec<vbt_core::Tick>> {
    let mut head = [0u8; 11];
    let n = fs::File::open(path)?.read(&mut head)?;
    let format = if n == TICK_BINARY_MAGIC.len() && &head == TICK_BINARY_MAGIC {
        TickFormat::Binary
    } else {
        TickFormat::Csv
    };
    let parsed = parse_ticks(BufReader::new(fs::File::open(path)?), format)?;
    if let Some(first) = parsed.errors.first() {
        if !lenient {
            return Err(Error::Parse {
                line: first.line,
                message: format!("{} ({} rejected rows; pass --lenient to skip them)", first.message, parsed.errors.len()),
            });
        }
        log::warn!("skipped {} malformed rows in {}", parsed.errors.len(), path.display());
    }
    Ok(parsed.ticks)
}

fn sample(cfg: &RunConfig, ticks_path: &Path, lenient: bool) -> Result<Vec<Bar>> {
    let ticks = read_ticks(ticks_path, lenient)?;
    let out = sample_bars(&ticks, &cfg.sampler_config())?;
    log::info!("{} ticks -> {} bars ({} warmup ticks)", ticks.len(), out.bars.len(), out.warmup_ticks);
    Ok(out.bars)
}

fn cmd_bars(cfg: &RunConfig, ticks: &Path, out: &Path, lenient: bool) -> Result<()> {
    let bars = sample(cfg, ticks, lenient)?;
    write_bars_csv(BufWriter::new(fs::File::create(out)?), &bars)?;
    Ok(())
}

fn load_bars(cfg: &RunConfig, lenient: bool) -> Result<Vec<Bar>> {
    match (&cfg.data.bars, &cfg.data.ticks) {
        (Some(b), _) => read_bars_csv(BufReader::new(fs::File::open(b)?)),
        (None, Some(t)) => sample(cfg, t, lenient),
        (None, None) => Err(Error::Config("no input data: pass --bars or --ticks (or set data.bars / data.ticks)".into())),
    }
}

fn cmd_train(cfg: &RunConfig, lenient: bool, resume: bool) -> Result<()> {
    let bars = load_bars(cfg, lenient)?;
    let job = cfg.job();
    let out = OutputDir::new(&cfg.data.out);
    for &seed in &cfg.seeds {
        let (_, summary) = train_seed(&job, &bars, seed, Some(&out), resume)?;
        println!(
            "{} seed {seed}: best validation sharpe {:.4} at epoch {} ({} epochs)",
            job.model(),
            summary.best_valid_sharpe,
            summary.best_epoch,
            summary.epochs_run
        );
    }
    Ok(())
}

fn cmd_backtest(cfg: &RunConfig, lenient: bool, resume: bool) -> Result<()> {
    let bars = load_bars(cfg, lenient)?;
    let out = OutputDir::new(&cfg.data.out);
    let report = run_backtest(&cfg.job(), &bars, &cfg.seeds, Some(&out), resume, cfg.to_json_value()?)?;
    let path = out.root.join("report.json");
    fs::write(&path, report.to_json()?)?;
    print!("{}", render_summary(&report.summary));
    log::info!("report written to {}", path.display());
    if report.per_run.iter().all(|r| r.seed.is_none() || r.error.is_some()) {
        return Err(Error::Numerics("every seeded run failed".into()));
    }
    Ok(())
}

fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut runs = Vec::new();
    let mut configs = Vec::new();
    for p in paths {
        let r = read_report(p)?;
        runs.extend(r.per_run);
        configs.push(r.config);
    }
    let config = if configs.len() == 1 { configs.remove(0) } else { serde_json::Value::Array(configs) };
    let report = BacktestReport {
        config,
        summary: aggregate_runs(&runs),
        per_run: runs,
    };
    print!("{}", render_summary(&report.summary));
    if let Some(out) = out {
        fs::write(out, report.to_json()?)?;
    }
    Ok(())
}
