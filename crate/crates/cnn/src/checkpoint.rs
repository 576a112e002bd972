//! Model files: one JSON header line, then every parameter block in
//! declaration order as little-endian f32.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::network::{Network, NetworkConfig};
use crate::CnnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: NetworkConfig,
    pub seed: u64,
    pub epoch: usize,
    pub param_count: usize,
    /// `(name, length)` of each block, in file order.
    pub blocks: Vec<(String, usize)>,
}

pub fn save_checkpoint<W: Write>(out: &mut W, net: &Network, seed: u64, epoch: usize) -> Result<(), CnnError> {
    let header = CheckpointHeader {
        config: net.config.clone(),
        seed,
        epoch,
        param_count: net.param_count(),
        blocks: net.blocks().into_iter().map(|(n, r)| (n, r.len())).collect(),
    };
    let line = serde_json::to_string(&header).map_err(|e| CnnError::Checkpoint(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(4 * net.params.len());
    for &p in &net.params {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Loads a model; parameters come back rounded to f32.
pub fn load_checkpoint<R: BufRead>(input: &mut R) -> Result<(CheckpointHeader, Network), CnnError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| CnnError::Checkpoint(format!("header: {e}")))?;
    let mut net = Network::new(header.config.clone(), header.seed)?;
    let expected: Vec<(String, usize)> = net.blocks().into_iter().map(|(n, r)| (n, r.len())).collect();
    if header.param_count != net.param_count() || header.blocks != expected {
        return Err(CnnError::Checkpoint("parameter blocks do not match the config".into()));
    }
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != 4 * header.param_count {
        return Err(CnnError::Checkpoint(format!(
            "{} parameter bytes, expected {}",
            raw.len(),
            4 * header.param_count
        )));
    }
    for (p, b) in net.params.iter_mut().zip(raw.chunks_exact(4)) {
        *p = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    }
    Ok((header, net))
}
