//! Linear returns and performance metrics.

use serde::{Deserialize, Serialize};

use crate::env::StepRecord;
use crate::{Error, Result};

/// Serialize non-finite floats as the strings `inf`, `-inf` and `NaN`.
pub mod float_or_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Per-period net linear returns `x_t = y_t a_t - λ_c |a_t - a'_t|`.
pub fn compute_linear_returns(records: &[StepRecord], lambda_c: f64) -> Vec<f64> {
    records.iter().map(|r| r.y * r.a_new - lambda_c * (r.a_new - r.a_drifted).abs()).collect()
}

/// `R_T = Π (1 + x_t)`.
pub fn total_return(linear_returns: &[f64]) -> f64 {
    linear_returns.iter().map(|x| 1.0 + x).product()
}

/// Compounded equity starting at 1.0; one more entry than `linear_returns`.
pub fn equity_curve(linear_returns: &[f64]) -> Vec<f64> {
    let mut eq = Vec::with_capacity(linear_returns.len() + 1);
    eq.push(1.0);
    let mut e = 1.0;
    for x in linear_returns {
        e *= 1.0 + x;
        eq.push(e);
    }
    eq
}

/// Largest relative loss from a running peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        if peak > 0.0 {
            mdd = mdd.max((peak - e) / peak);
        }
    }
    mdd.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Annualized mean linear return.
    pub expected_return: f64,
    /// Annualized population standard deviation.
    pub std_return: f64,
    #[serde(with = "float_or_string")]
    pub sharpe: f64,
    /// Set when the standard deviation is zero; `sharpe` is then ±inf (or 0 for a zero mean).
    pub sharpe_undefined: bool,
    pub mdd: f64,
    pub hit_rate: f64,
    pub final_equity: f64,
    pub periods: usize,
}

impl Metrics {
    /// Sharpe from annualized mean and standard deviation.
    pub fn sharpe_ratio(expected_return: f64, std_return: f64) -> (f64, bool) {
        if std_return > 0.0 {
            (expected_return / std_return, false)
        } else if expected_return > 0.0 {
            (f64::INFINITY, true)
        } else if expected_return < 0.0 {
            (f64::NEG_INFINITY, true)
        } else {
            (0.0, true)
        }
    }
}

pub fn compute_metrics(linear_returns: &[f64], bars_per_year: f64) -> Result<Metrics> {
    if linear_returns.is_empty() {
        return Err(Error::Domain("metrics need at least one period".into()));
    }
    if !(bars_per_year > 0.0) {
        return Err(Error::Domain(format!("bars per year must be positive, got {bars_per_year}")));
    }
    if linear_returns.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerics("non-finite linear return".into()));
    }
    let n = linear_returns.len() as f64;
    let mean = linear_returns.iter().sum::<f64>() / n;
    let var = linear_returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let expected_return = mean * bars_per_year;
    let std_return = var.sqrt() * bars_per_year.sqrt();
    let (sharpe, sharpe_undefined) = Metrics::sharpe_ratio(expected_return, std_return);
    let equity = equity_curve(linear_returns);
    Ok(Metrics {
        expected_return,
        std_return,
        sharpe,
        sharpe_undefined,
        mdd: max_drawdown(&equity),
        hit_rate: linear_returns.iter().filter(|&&x| x > 0.0).count() as f64 / n,
        final_equity: *equity.last().expect("non-empty"),
        periods: linear_returns.len(),
    })
}
