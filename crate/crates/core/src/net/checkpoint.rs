//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header `{arch, timestep, tensors: [{name, len}]}`, then every tensor as
//! little-endian `f32` in header order (learnable weights followed by the
//! batch-norm running statistics).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{BnStats, QNetParams, Weights};
use super::NetArch;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FRLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: NetArch,
    timestep: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub timestep: u64,
    pub params: QNetParams<f32>,
}

impl Checkpoint {
    /// Loads a checkpoint and requires its architecture to equal `arch`.
    pub fn load_expecting(path: impl AsRef<Path>, arch: &NetArch) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.params.arch() != arch {
            return Err(Error::ArchMismatch(format!(
                "checkpoint has {:?}, configuration expects {:?}",
                ck.params.arch(),
                arch
            )));
        }
        Ok(ck)
    }
}

fn bn_names(stats: &BnStats<f32>) -> Vec<(String, &[f32])> {
    let mut out = Vec::new();
    for s in 0..stats.mean.len() {
        out.push((format!("conv{}.running_mean", s + 1), &stats.mean[s][..]));
        out.push((format!("conv{}.running_var", s + 1), &stats.var[s][..]));
    }
    out
}

pub fn encode_checkpoint(params: &QNetParams<f32>, timestep: u64) -> Result<Vec<u8>> {
    let w = params.weights();
    let mut tensors: Vec<(String, &[f32])> =
        w.tensor_names().into_iter().zip(w.tensors()).collect();
    tensors.extend(bn_names(&params.bn));
    let header = Header {
        arch: params.arch().clone(),
        timestep,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * total);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a focusrl checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    header.arch.validate()?;
    let mut data = &body[hlen..];

    let mut weights = Weights::<f32>::zeros(&header.arch);
    let mut bn = BnStats::<f32>::fresh(&header.arch);
    let expect_names: Vec<String> = weights
        .tensor_names()
        .into_iter()
        .chain(bn_names(&bn).into_iter().map(|(n, _)| n))
        .collect();
    let got_names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if got_names != expect_names {
        return Err(bad("tensor list does not match the stored architecture"));
    }

    let mut dests: Vec<&mut [f32]> = weights.tensors_mut();
    for (m, v) in bn.mean.iter_mut().zip(bn.var.iter_mut()) {
        dests.push(m);
        dests.push(v);
    }
    for (entry, dst) in header.tensors.iter().zip(dests) {
        if entry.len != dst.len() {
            return Err(bad(format!(
                "tensor {} has {} values, architecture needs {}",
                entry.name,
                entry.len,
                dst.len()
            )));
        }
        let nbytes = 4 * entry.len;
        if data.len() < nbytes {
            return Err(bad(format!("truncated data in tensor {}", entry.name)));
        }
        for (d, chunk) in dst.iter_mut().zip(data[..nbytes].chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        data = &data[nbytes..];
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    if bn.var.iter().flatten().any(|&v| !(v > 0.0)) {
        return Err(bad("running variance must be positive"));
    }
    Ok(Checkpoint {
        timestep: header.timestep,
        params: QNetParams::from_parts(header.arch, weights, bn)?,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &QNetParams<f32>,
    timestep: u64,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, timestep)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
