//! Checkpoint serialization: a one-line magic, a TOML header describing the
//! architecture and array layout, then a little-endian f32 payload.
//!
//! The payload carries every parameter array in declaration order followed
//! by each batchnorm layer's running mean and variance. A SHA-256 digest of
//! the payload is stored in the header and verified on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, Param};
use super::ArchitectureSpec;
use crate::error::Error;
use crate::fsutil::{sha256_hex, write_atomic};
use crate::scalar::Scalar;
use crate::tensor::RunningStats;

const MAGIC: &str = "PGCKPT1";
const VERSION: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// 1-based epoch the weights were taken from.
    pub epoch: usize,
    #[serde(with = "crate::serde_seed")]
    pub seed: u64,
    pub val_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct ArrayDesc {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StatsDesc {
    name: String,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    payload_len: u64,
    payload_sha256: String,
    meta: CheckpointMeta,
    spec: ArchitectureSpec,
    #[serde(default)]
    params: Vec<ArrayDesc>,
    #[serde(default)]
    running_stats: Vec<StatsDesc>,
}

fn push_f32s<S: Scalar>(out: &mut Vec<u8>, data: &[S]) {
    for &x in data {
        out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
    }
}

/// Serializes the network and metadata to `path`, replacing any existing
/// file atomically.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    net: &Network<S>,
    meta: &CheckpointMeta,
) -> Result<(), Error> {
    let mut payload = Vec::new();
    let mut params = Vec::new();
    for p in &net.params {
        params.push(ArrayDesc {
            name: p.name.clone(),
            shape: p.shape.clone(),
        });
        push_f32s(&mut payload, &p.data);
    }
    let mut running_stats = Vec::new();
    for (i, st) in net.bn_states.iter().enumerate() {
        running_stats.push(StatsDesc {
            name: format!("bn{}", i + 1),
            channels: st.mean.len(),
        });
        push_f32s(&mut payload, &st.mean);
        push_f32s(&mut payload, &st.var);
    }

    let header = Header {
        version: VERSION,
        payload_len: payload.len() as u64,
        payload_sha256: sha256_hex(&payload),
        meta: meta.clone(),
        spec: net.spec.clone(),
        params,
        running_stats,
    };
    let header_toml =
        toml::to_string(&header).map_err(|e| Error::Format(format!("header encode: {e}")))?;

    let mut bytes = Vec::with_capacity(header_toml.len() + payload.len() + 32);
    bytes.extend_from_slice(format!("{MAGIC} {}\n", header_toml.len()).as_bytes());
    bytes.extend_from_slice(header_toml.as_bytes());
    bytes.extend_from_slice(&payload);
    write_atomic(path, &bytes)
}

fn take_f32s<S: Scalar>(payload: &[u8], cursor: &mut usize, n: usize) -> Result<Vec<S>, Error> {
    let bytes = n * 4;
    let end = *cursor + bytes;
    if end > payload.len() {
        return Err(Error::Integrity("checkpoint payload is truncated".into()));
    }
    let out = payload[*cursor..end]
        .chunks_exact(4)
        .map(|c| S::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    *cursor = end;
    Ok(out)
}

/// Loads and verifies a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Network<S>, CheckpointMeta), Error> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing checkpoint magic line".into()))?;
    let first = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::Format("checkpoint magic line is not UTF-8".into()))?;
    let mut parts = first.split_whitespace();
    let magic = parts.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(Error::Format(format!("unrecognized checkpoint magic {magic:?}")));
    }
    let header_len: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed checkpoint header length".into()))?;
    if parts.next().is_some() {
        return Err(Error::Format("malformed checkpoint magic line".into()));
    }

    let header_start = newline + 1;
    let header_end = header_start + header_len;
    if header_end > bytes.len() {
        return Err(Error::Integrity("checkpoint header is truncated".into()));
    }
    let header_str = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let header: Header =
        toml::from_str(header_str).map_err(|e| Error::Format(format!("header decode: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    let payload = &bytes[header_end..];
    if (payload.len() as u64) < header.payload_len {
        return Err(Error::Integrity("checkpoint payload is truncated".into()));
    }
    if (payload.len() as u64) > header.payload_len {
        return Err(Error::Integrity(
            "checkpoint has trailing bytes after the payload".into(),
        ));
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(Error::Integrity("checkpoint payload checksum mismatch".into()));
    }

    let mut cursor = 0usize;
    let mut params = Vec::with_capacity(header.params.len());
    for desc in &header.params {
        let numel: usize = desc.shape.iter().product();
        params.push(Param {
            name: desc.name.clone(),
            shape: desc.shape.clone(),
            data: take_f32s::<S>(payload, &mut cursor, numel)?,
        });
    }
    let mut bn_states = Vec::with_capacity(header.running_stats.len());
    for desc in &header.running_stats {
        let mean = take_f32s::<S>(payload, &mut cursor, desc.channels)?;
        let var = take_f32s::<S>(payload, &mut cursor, desc.channels)?;
        bn_states.push(RunningStats { mean, var });
    }
    if cursor != payload.len() {
        return Err(Error::Integrity(
            "checkpoint payload is longer than the declared arrays".into(),
        ));
    }

    let net = Network::from_parts(header.spec, params, bn_states)?;
    Ok((net, header.meta))
}
