//! Model checkpoints: a JSON descriptor next to a binary parameter blob.
//!
//! Blob layout: 8-byte magic, `u32` format version, `u64` parameter count,
//! then the parameters as little-endian `f64` in layer order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Architecture, LayerDesc, Network};

pub const MAGIC: [u8; 8] = *b"NWSRPRM\0";
pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "nwsr-checkpoint";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub layers: Vec<LayerDesc>,
    pub param_count: usize,
    pub nw_eps: f64,
    /// Blob file name, relative to the descriptor.
    pub blob: String,
}

pub fn params_to_bytes(params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < HEADER_LEN || bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("parameter blob has no valid header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported blob version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n.saturating_mul(8) {
        return Err(Error::Checkpoint(format!(
            "blob declares {n} parameters but holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn blob_path(descriptor: &Path) -> PathBuf {
    descriptor.with_extension("bin")
}

/// Writes `<path>` (JSON) and the blob beside it with a `.bin` extension.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let meta = CheckpointMeta {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        architecture: net.architecture(),
        layers: net.descriptor(),
        param_count: net.param_count(),
        nw_eps: net.nw_eps(),
        blob: blob
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
            .to_string(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&meta)? + "\n")?;
    std::fs::write(blob, params_to_bytes(net.params()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            meta.format, meta.version
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let params = params_from_bytes(&std::fs::read(dir.join(&meta.blob))?)?;
    if params.len() != meta.param_count {
        return Err(Error::Checkpoint("descriptor and blob disagree on parameter count".into()));
    }
    let net = Network::from_params(meta.architecture, params, meta.nw_eps)?;
    if net.descriptor() != meta.layers {
        return Err(Error::Checkpoint("layer list does not match the architecture".into()));
    }
    Ok(net)
}
