//! Predictor checkpoints, one file per embedding space.
//!
//! Layout: magic `KISP`, u32 version, u32 header length, a JSON header with
//! the config and tensor table, then every parameter as little-endian f32 in
//! table order.

use std::fs;
use std::path::{Path, PathBuf};

use kis_core::perception::{Predictor, PredictorConfig, TensorInfo, TrainReport};
use kis_core::Corpus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CKPT_MAGIC: [u8; 4] = *b"KISP";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub space_id: String,
    pub config: PredictorConfig,
    pub tensors: Vec<TensorInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<TrainReport>,
}

pub fn checkpoint_path(dir: &Path, space_id: &str) -> PathBuf {
    dir.join(format!("{space_id}.ckpt"))
}

pub fn encode(space_id: &str, predictor: &Predictor<f32>, report: Option<&TrainReport>) -> Vec<u8> {
    let header = CheckpointHeader {
        space_id: space_id.to_string(),
        config: predictor.config().clone(),
        tensors: predictor.tensors().to_vec(),
        report: report.cloned(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
    let mut out = Vec::with_capacity(12 + json.len() + predictor.num_params() * 4);
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for x in predictor.params() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, Predictor<f32>)> {
    if bytes.len() < 12 || bytes[..4] != CKPT_MAGIC {
        return Err(Error::format(path, "not a predictor checkpoint"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice")) as usize;
    if word(4) as u32 != CKPT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {}", word(4))));
    }
    let hlen = word(8);
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::format(path, "truncated checkpoint header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    let data = &bytes[12 + hlen..];
    if data.len() % 4 != 0 {
        return Err(Error::format(path, "parameter data is not a whole number of f32 values"));
    }
    let params: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let predictor = Predictor::from_params(header.config.clone(), params)?;
    if predictor.tensors() != header.tensors.as_slice() {
        return Err(Error::format(path, "tensor table does not match the stored config"));
    }
    Ok((header, predictor))
}

pub fn save(dir: &Path, space_id: &str, predictor: &Predictor<f32>, report: Option<&TrainReport>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = checkpoint_path(dir, space_id);
    fs::write(&path, encode(space_id, predictor, report)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Predictor<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Loads one checkpoint per corpus space, in space order.
pub fn load_all(dir: &Path, corpus: &Corpus) -> Result<Vec<Predictor<f32>>> {
    corpus
        .spaces()
        .iter()
        .map(|s| {
            let path = checkpoint_path(dir, s.id());
            if !path.exists() {
                return Err(Error::format(&path, format!("missing checkpoint for space {}", s.id())));
            }
            let (header, p) = load(&path)?;
            if header.config.input_dim != s.dim() {
                return Err(kis_core::Error::DimMismatch {
                    context: format!("checkpoint for space {}", s.id()),
                    expected: s.dim(),
                    actual: header.config.input_dim,
                }
                .into());
            }
            Ok(p)
        })
        .collect()
}

/// SHA-256 over the encoded predictors, in order.
pub fn fingerprint(predictors: &[Predictor<f32>]) -> String {
    let mut h = Sha256::new();
    for p in predictors {
        for x in p.params() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
