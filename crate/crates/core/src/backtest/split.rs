use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Bars between test-time refits; `None` disables refitting.
    pub refit_interval: Option<usize>,
    /// Whether refits may update batch-norm running statistics.
    pub refit_updates_bn: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.25,
            valid_fraction: 0.25,
            test_fraction: 0.5,
            eval_every: 10,
            patience: 5,
            max_epochs: 200,
            refit_interval: Some(50),
            refit_updates_bn: true,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {fr:?}")));
        }
        if self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config("eval_every and patience must be at least 1".into()));
        }
        if self.refit_interval == Some(0) {
            return Err(Error::Config("refit interval must be positive (omit it to disable refits)".into()));
        }
        Ok(())
    }
}

/// Contiguous chronological (train, valid, test) ranges; train and valid
/// lengths are rounded down and the test segment takes the rest.
pub fn split(len: usize, cfg: &SplitConfig) -> (Range<usize>, Range<usize>, Range<usize>) {
    let train = (len as f64 * cfg.train_fraction).floor() as usize;
    let valid = (len as f64 * cfg.valid_fraction).floor() as usize;
    (0..train, train..train + valid, train + valid..len)
}
