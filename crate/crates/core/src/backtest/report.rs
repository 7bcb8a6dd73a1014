//! Per-run reports, seed aggregation and equity-curve files.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{equity_curve, Metrics};
use crate::env::StepRecord;
use crate::market_data::Bar;
use crate::Result;

/// Label of the buy-and-hold baseline row.
pub const BASELINE_LABEL: &str = "Buy & Hold";
pub const AVERAGE_LABEL: &str = "Average";
/// Model rows in table order.
pub const MODEL_ORDER: [&str; 4] = ["PG-CNN", "PG-LSTM", "AC-CNN", "AC-LSTM"];

mod opt_float_or_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::super::metrics::float_or_string")] f64);

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        x.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// `None` for the baseline, which has no randomness.
    pub seed: Option<u64>,
    pub model: String,
    pub lambda_sigma: f64,
    pub metrics: Option<Metrics>,
    /// Set when the run aborted (for example on a non-finite loss).
    pub error: Option<String>,
    /// Relative to the report's output directory.
    pub equity_curve_path: Option<String>,
    pub best_epoch: Option<usize>,
    #[serde(with = "opt_float_or_string", default)]
    pub best_valid_sharpe: Option<f64>,
    pub epochs_run: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(with = "super::metrics::float_or_string")]
    pub expected_return: f64,
    #[serde(with = "super::metrics::float_or_string")]
    pub std_return: f64,
    #[serde(with = "super::metrics::float_or_string")]
    pub sharpe: f64,
    #[serde(with = "super::metrics::float_or_string")]
    pub mdd: f64,
    #[serde(with = "super::metrics::float_or_string")]
    pub hit_rate: f64,
}

impl MetricSummary {
    fn from_metrics(m: &Metrics) -> Self {
        Self {
            expected_return: m.expected_return,
            std_return: m.std_return,
            sharpe: m.sharpe,
            mdd: m.mdd,
            hit_rate: m.hit_rate,
        }
    }

    fn fields(&self) -> [f64; 5] {
        [self.expected_return, self.std_return, self.sharpe, self.mdd, self.hit_rate]
    }

    fn from_fields(f: [f64; 5]) -> Self {
        Self {
            expected_return: f[0],
            std_return: f[1],
            sharpe: f[2],
            mdd: f[3],
            hit_rate: f[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    /// `None` for the baseline row.
    pub lambda_sigma: Option<f64>,
    /// Successful runs contributing to the row.
    pub runs: usize,
    pub failed: usize,
    pub mean: MetricSummary,
    /// Sample standard deviation across runs (zero for a single run).
    pub std: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: serde_json::Value,
    pub per_run: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
}

impl BacktestReport {
    pub fn new(config: serde_json::Value, per_run: Vec<RunReport>) -> Self {
        let summary = aggregate_runs(&per_run);
        Self { config, per_run, summary }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn mean_std(rows: &[[f64; 5]]) -> ([f64; 5], [f64; 5]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    if rows.is_empty() {
        return ([f64::NAN; 5], [f64::NAN; 5]);
    }
    for k in 0..5 {
        mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        if rows.len() > 1 {
            let ss: f64 = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum();
            std[k] = (ss / (n - 1.0)).sqrt();
        }
    }
    (mean, std)
}

fn row(model: &str, lambda_sigma: Option<f64>, runs: &[&RunReport]) -> SummaryRow {
    let ok: Vec<[f64; 5]> = runs
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .map(|m| MetricSummary::from_metrics(m).fields())
        .collect();
    let (mean, std) = mean_std(&ok);
    SummaryRow {
        model: model.to_string(),
        lambda_sigma,
        runs: ok.len(),
        failed: runs.len() - ok.len(),
        mean: MetricSummary::from_fields(mean),
        std: MetricSummary::from_fields(std),
    }
}

fn model_rank(model: &str) -> usize {
    MODEL_ORDER.iter().position(|m| *m == model).unwrap_or(MODEL_ORDER.len())
}

/// Mean (and spread) of each metric over seeds, laid out as the results
/// table: baseline first, then one block per `lambda_sigma` in ascending
/// order with model rows followed by an average over the block's models.
pub fn aggregate_runs(runs: &[RunReport]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let baseline: Vec<&RunReport> = runs.iter().filter(|r| r.model == BASELINE_LABEL).collect();
    if !baseline.is_empty() {
        // The baseline does not depend on the risk term; repeated copies are identical.
        let mut seen = Vec::new();
        let unique: Vec<&RunReport> = baseline
            .into_iter()
            .filter(|r| {
                let key = serde_json::to_string(&r.metrics).unwrap_or_default();
                let fresh = !seen.contains(&key);
                seen.push(key);
                fresh
            })
            .collect();
        out.push(row(BASELINE_LABEL, None, &unique));
    }
    let mut sigmas: Vec<f64> = runs.iter().filter(|r| r.model != BASELINE_LABEL).map(|r| r.lambda_sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    for ls in sigmas {
        let mut models: Vec<&str> = runs
            .iter()
            .filter(|r| r.model != BASELINE_LABEL && r.lambda_sigma == ls)
            .map(|r| r.model.as_str())
            .collect();
        models.sort_by(|a, b| model_rank(a).cmp(&model_rank(b)).then(a.cmp(b)));
        models.dedup();
        let block: Vec<SummaryRow> = models
            .iter()
            .map(|m| {
                let rs: Vec<&RunReport> = runs.iter().filter(|r| r.model == *m && r.lambda_sigma == ls).collect();
                row(m, Some(ls), &rs)
            })
            .collect();
        let means: Vec<[f64; 5]> = block.iter().filter(|r| r.runs > 0).map(|r| r.mean.fields()).collect();
        let (avg, spread) = mean_std(&means);
        let average = SummaryRow {
            model: AVERAGE_LABEL.to_string(),
            lambda_sigma: Some(ls),
            runs: block.iter().map(|r| r.runs).sum(),
            failed: block.iter().map(|r| r.failed).sum(),
            mean: MetricSummary::from_fields(avg),
            std: MetricSummary::from_fields(spread),
        };
        out.extend(block);
        out.push(average);
    }
    out
}

/// Fixed-width text rendering of the summary table.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}  runs\n", "", "E[R]", "Std(R)", "Sharpe", "MDD", "Hit");
    let mut block = None;
    for r in rows {
        if r.lambda_sigma != block {
            block = r.lambda_sigma;
            if let Some(ls) = block {
                s.push_str(&format!("-- lambda_sigma = {ls} --\n"));
            }
        }
        let m = &r.mean;
        s.push_str(&format!(
            "{:<12} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}  {}",
            r.model, m.expected_return, m.std_return, m.sharpe, m.mdd, m.hit_rate, r.runs
        ));
        if r.failed > 0 {
            s.push_str(&format!(" ({} failed)", r.failed));
        }
        s.push('\n');
    }
    s
}

/// Equity curve as `bar_index,end_ts,action,linear_return,equity`, one row per
/// realized return. `bar_index` is the bar whose close realizes the return.
pub fn write_equity_csv<W: Write>(w: W, bars: &[Bar], records: &[StepRecord], linear_returns: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["bar_index", "end_ts", "action", "linear_return", "equity"])?;
    let equity = equity_curve(linear_returns);
    for ((r, x), e) in records.iter().zip(linear_returns).zip(&equity[1..]) {
        let i = r.t + 1;
        wtr.write_record([
            i.to_string(),
            bars[i].end_ts.to_string(),
            r.a_new.to_string(),
            x.to_string(),
            e.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::metrics::compute_metrics;

    fn run(model: &str, ls: f64, seed: u64, returns: &[f64]) -> RunReport {
        RunReport {
            seed: Some(seed),
            model: model.into(),
            lambda_sigma: ls,
            metrics: Some(compute_metrics(returns, 252.0).unwrap()),
            error: None,
            equity_curve_path: None,
            best_epoch: None,
            best_valid_sharpe: None,
            epochs_run: None,
        }
    }

    fn with_sharpe(model: &str, ls: f64, sharpe: f64) -> RunReport {
        let mut r = run(model, ls, 0, &[0.01, -0.005]);
        r.metrics.as_mut().unwrap().sharpe = sharpe;
        r
    }

    #[test]
    fn two_runs_average() {
        let rows = aggregate_runs(&[with_sharpe("PG-CNN", 0.0, 0.5), with_sharpe("PG-CNN", 0.0, 1.0)]);
        assert_eq!(rows[0].model, "PG-CNN");
        assert!((rows[0].mean.sharpe - 0.75).abs() < 1e-15);
        assert_eq!(rows[0].runs, 2);
    }

    #[test]
    fn identical_runs_echo() {
        let r = run("AC-LSTM", 0.1, 3, &[0.01, 0.02, -0.01]);
        let rows = aggregate_runs(&[r.clone(), r.clone(), r.clone()]);
        let m = r.metrics.unwrap();
        assert!((rows[0].mean.sharpe - m.sharpe).abs() < 1e-12);
        assert!((rows[0].mean.mdd - m.mdd).abs() < 1e-15);
        assert!(rows[0].std.sharpe.abs() < 1e-12);
    }

    #[test]
    fn grid_layout() {
        let mut runs = Vec::new();
        for ls in [0.2, 0.0, 0.1, 0.01] {
            for m in ["AC-LSTM", "PG-LSTM", "AC-CNN", "PG-CNN"] {
                for seed in 0..2 {
                    runs.push(run(m, ls, seed, &[0.01 * (seed + 1) as f64, -0.004]));
                }
            }
        }
        let mut base = run(BASELINE_LABEL, 0.0, 0, &[0.003, 0.001]);
        base.seed = None;
        runs.insert(7, base.clone());
        runs.push(base);
        let rows = aggregate_runs(&runs);
        assert_eq!(rows.len(), 1 + 4 * 5);
        assert_eq!(rows[0].model, BASELINE_LABEL);
        assert_eq!(rows[0].runs, 1);
        let mut expected = Vec::new();
        for ls in [0.0, 0.01, 0.1, 0.2] {
            for m in MODEL_ORDER.iter().chain([&AVERAGE_LABEL]) {
                expected.push((m.to_string(), Some(ls)));
            }
        }
        let got: Vec<_> = rows[1..].iter().map(|r| (r.model.clone(), r.lambda_sigma)).collect();
        assert_eq!(got, expected);
        let avg = &rows[5];
        let direct: f64 = rows[1..5].iter().map(|r| r.mean.sharpe).sum::<f64>() / 4.0;
        assert!((avg.mean.sharpe - direct).abs() < 1e-12);
    }

    #[test]
    fn failed_runs_are_counted_not_averaged() {
        let mut bad = with_sharpe("PG-CNN", 0.0, 9.0);
        bad.metrics = None;
        bad.error = Some("numerics".into());
        let rows = aggregate_runs(&[with_sharpe("PG-CNN", 0.0, 0.4), bad]);
        assert_eq!((rows[0].runs, rows[0].failed), (1, 1));
        assert!((rows[0].mean.sharpe - 0.4).abs() < 1e-15);
    }

    #[test]
    fn report_json_round_trip_with_infinite_sharpe() {
        let mut r = run("PG-CNN", 0.0, 1, &[0.01, 0.01]);
        r.best_valid_sharpe = Some(f64::INFINITY);
        let report = BacktestReport::new(serde_json::json!({"n": 20}), vec![r]);
        let s = report.to_json().unwrap();
        assert!(s.contains("\"inf\""));
        let back = BacktestReport::from_json(&s).unwrap();
        assert_eq!(back.per_run, report.per_run);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn equity_csv_rows() {
        let bars: Vec<Bar> = (0..4).map(|i| Bar::flat(i * 10, 100.0)).collect();
        let rec = StepRecord {
            t: 1,
            a_prev: 0.0,
            a_drifted: 0.0,
            a_new: 0.5,
            y: 0.02,
            r_gross: 0.0,
            r_net: 0.0,
            r: 0.0,
        };
        let mut out = Vec::new();
        write_equity_csv(&mut out, &bars, &[rec], &[0.01]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bar_index,end_ts,action,linear_return,equity");
        assert_eq!(lines[1], "2,20,0.5,0.01,1.01");
    }
}
