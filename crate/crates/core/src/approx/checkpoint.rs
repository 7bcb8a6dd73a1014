//! Binary parameter checkpoints.
//!
//! Layout: the magic line, a little-endian `u64` header length, a JSON
//! header describing networks and tensors, then for each tensor its values
//! followed (trainable tensors only) by the Adam `m` and `v` buffers, all as
//! little-endian `f32`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::network::NetworkSpec;
use super::optim::OptimizerConfig;
use super::params::ParameterSet;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"VBT-CKPT-1\n";

/// One network with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub prefix: String,
    pub spec: NetworkSpec,
    pub optimizer: OptimizerConfig,
    pub step: u64,
    pub params: ParameterSet,
}

#[derive(Serialize, Deserialize)]
struct Header {
    networks: Vec<NetworkHeader>,
}

#[derive(Serialize, Deserialize)]
struct NetworkHeader {
    prefix: String,
    spec: NetworkSpec,
    optimizer: OptimizerConfig,
    step: u64,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for &x in xs {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[CheckpointEntry]) -> Result<()> {
    let header = Header {
        networks: entries
            .iter()
            .map(|e| NetworkHeader {
                prefix: e.prefix.clone(),
                spec: e.spec.clone(),
                optimizer: e.optimizer.clone(),
                step: e.step,
                tensors: e
                    .params
                    .iter()
                    .map(|p| TensorHeader {
                        name: p.name.clone(),
                        shape: p.shape.clone(),
                        trainable: p.trainable,
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for e in entries {
        for p in e.params.iter() {
            write_f32s(&mut w, &p.value)?;
            if p.trainable {
                write_f32s(&mut w, &p.m)?;
                write_f32s(&mut w, &p.v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<CheckpointEntry>> {
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short for a checkpoint".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing VBT-CKPT-1 header".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut entries = Vec::with_capacity(header.networks.len());
    for net in header.networks {
        let mut params = ParameterSet::new();
        for t in &net.tensors {
            let size: usize = t.shape.iter().product();
            let value = read_f32s(&mut r, size)?;
            let id = params.add(t.name.clone(), &t.shape, t.trainable, value);
            if t.trainable {
                let m = read_f32s(&mut r, size)?;
                let v = read_f32s(&mut r, size)?;
                let p = params.get_mut(id);
                p.m = m;
                p.v = v;
            }
        }
        entries.push(CheckpointEntry {
            prefix: net.prefix,
            spec: net.spec,
            optimizer: net.optimizer,
            step: net.step,
            params,
        });
    }
    Ok(entries)
}
