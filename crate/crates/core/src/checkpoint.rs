//! Model checkpoints: one line of JSON header, a newline, then the parameter
//! vector as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    /// `detector`, `classifier` or `proportion`.
    pub kind: String,
    pub topology: serde_json::Value,
    pub seed: u64,
    pub hyperparams: serde_json::Value,
    pub param_count: usize,
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if header.param_count != params.len() {
        return Err(fail(format!(
            "header declares {} parameters, got {}",
            header.param_count,
            params.len()
        )));
    }
    let mut bytes = serde_json::to_vec(header).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    bytes.reserve(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let fail = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail("missing header line"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::json(path, e))?;
    let blob = &bytes[nl + 1..];
    if blob.len() != header.param_count * 8 {
        return Err(fail("parameter blob length does not match header"));
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, params))
}
