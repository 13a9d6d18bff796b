//! Checkpoint files: `TWINCKPT`, a little-endian `u32` version, a `u32`
//! header length, the JSON header, then the parameters as little-endian `f32`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::PolicyError;
use crate::net::{NetSpec, PolicyNet};
use crate::obs::{Normalizer, RepresentationKind};

pub const MAGIC: &[u8; 8] = b"TWINCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub spec: NetSpec,
    pub normalizer: Normalizer,
    pub config_digest: String,
    pub params: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: usize,
    kind: RepresentationKind,
    spec: NetSpec,
    normalizer: Normalizer,
    config_digest: String,
    param_count: usize,
}

impl Checkpoint {
    /// Parameters are stored at single precision.
    pub fn from_net(net: &PolicyNet, normalizer: &Normalizer, step: usize, config_digest: &str) -> Self {
        Self {
            step,
            spec: net.spec.clone(),
            normalizer: normalizer.clone(),
            config_digest: config_digest.to_string(),
            params: net.params.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn kind(&self) -> RepresentationKind {
        self.spec.kind
    }

    pub fn to_net(&self) -> Result<PolicyNet, PolicyError> {
        let mut net = PolicyNet::zeroed(self.spec.clone())?;
        if net.param_count() != self.params.len() {
            return Err(PolicyError::Format(format!(
                "{} parameters for a network of {}",
                self.params.len(),
                net.param_count()
            )));
        }
        net.params = self.params.iter().map(|&v| v as f64).collect();
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            step: self.step,
            kind: self.spec.kind,
            spec: self.spec.clone(),
            normalizer: self.normalizer.clone(),
            config_digest: self.config_digest.clone(),
            param_count: self.params.len(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let truncated = || PolicyError::Format("truncated file".into());
        if bytes.len() < 16 {
            return Err(truncated());
        }
        if &bytes[..8] != MAGIC {
            return Err(PolicyError::Format("bad magic bytes".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_end = 16 + word(12) as usize;
        let header: Header =
            serde_json::from_slice(bytes.get(16..header_end).ok_or_else(truncated)?).map_err(|e| PolicyError::Format(e.to_string()))?;
        if header.kind != header.spec.kind {
            return Err(PolicyError::Format("header kind disagrees with network spec".into()));
        }
        let body = &bytes[header_end..];
        if body.len() != 4 * header.param_count {
            return Err(if body.len() < 4 * header.param_count {
                truncated()
            } else {
                PolicyError::Format("trailing bytes".into())
            });
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            step: header.step,
            spec: header.spec,
            normalizer: header.normalizer,
            config_digest: header.config_digest,
            params,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PolicyError> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

/// Loads a checkpoint; with `expected` set, its kind must match.
pub fn load_checkpoint(path: &Path, expected: Option<RepresentationKind>) -> Result<Checkpoint, PolicyError> {
    let ckpt = Checkpoint::from_bytes(&std::fs::read(path)?)?;
    match expected {
        Some(kind) if kind != ckpt.kind() => Err(PolicyError::KindMismatch {
            expected: kind.to_string(),
            found: ckpt.kind().to_string(),
        }),
        _ => Ok(ckpt),
    }
}
