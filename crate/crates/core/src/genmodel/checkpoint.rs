//! `MVPARM01` checkpoint files: magic, u32 descriptor length, descriptor
//! JSON, u64 parameter count, float32 parameters (all little endian).

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::network::ModelParams;
use super::objective::ModelConfig;
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 8] = b"MVPARM01";

pub fn encode_checkpoint(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let descriptor = serde_json::to_vec(config)?;
    let mut out = Vec::with_capacity(24 + descriptor.len() + params.len() * 4);
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(&descriptor);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let corrupt = |what: &str| Error::CorruptRecord(format!("checkpoint {what}"));
    if bytes.len() < 12 || &bytes[..8] != PARAM_MAGIC {
        return Err(corrupt("magic"));
    }
    let dlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let descriptor = bytes.get(12..12 + dlen).ok_or_else(|| corrupt("descriptor truncated"))?;
    let config: ModelConfig = serde_json::from_slice(descriptor)?;
    let pos = 12 + dlen;
    let count_bytes = bytes.get(pos..pos + 8).ok_or_else(|| corrupt("count truncated"))?;
    let count = u64::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
    if count != config.arch.param_count() {
        return Err(corrupt("parameter count disagrees with architecture"));
    }
    let raw = bytes
        .get(pos + 8..pos + 8 + count * 4)
        .ok_or_else(|| corrupt("parameters truncated"))?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok((config, ModelParams { arch: config.arch, values }))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<String> {
    let bytes = encode_checkpoint(config, params)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// SHA-256 of the serialized checkpoint; identifies parameters in run
/// fingerprints.
pub fn checkpoint_hash(config: &ModelConfig, params: &ModelParams) -> Result<[u8; 32]> {
    Ok(Sha256::digest(encode_checkpoint(config, params)?).into())
}
