//! Training diagnostics as JSON lines.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss_actor: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_critic: Option<f64>,
    pub epsilon: f64,
    pub grad_norm: f64,
    pub reward_mean: f64,
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[DiagnosticRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
