//! Branch checkpoint format: one binary file of little-endian 32-bit floats
//! plus a JSON sidecar describing the backbone.
//!
//! Layout:
//!   magic  `AMENCKPT`      (8 bytes)
//!   version u32 LE         (currently 1)
//!   tensor_count u32 LE
//!   per tensor: rank u8, extents u32 LE each, then numel f32 LE values
//!
//! Tensors appear in `BranchParams::tensors()` order. Values are truncated
//! from f64 to f32 on save and widened back on load; the sidecar pins the
//! spec so shapes can be validated.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{init_backbone, BackboneSpec, BranchParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AMENCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub spec: BackboneSpec,
}

fn encode(params: &BranchParams) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Decode {
                path: self.path.to_path_buf(),
                reason: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "bad magic, not a checkpoint".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Tensor::new(&shape, data)?);
    }
    Ok(tensors)
}

/// Write `<path>` (binary) and `<path with .json extension>` (sidecar).
pub fn save_checkpoint(path: &Path, spec: &BackboneSpec, params: &BranchParams) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))?;
    let sidecar = CheckpointSidecar {
        format_version: VERSION,
        spec: spec.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("spec serializes");
    let side_path = sidecar_path(path);
    fs::write(&side_path, json).map_err(|e| Error::io(&side_path, e))
}

pub fn sidecar_path(bin_path: &Path) -> std::path::PathBuf {
    bin_path.with_extension("json")
}

/// Load and validate a checkpoint pair. Shapes must match what the sidecar's
/// spec would initialize.
pub fn load_checkpoint(path: &Path) -> Result<(BackboneSpec, BranchParams)> {
    let side_path = sidecar_path(path);
    let json = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: CheckpointSidecar = serde_json::from_str(&json).map_err(|e| Error::Decode {
        path: side_path.clone(),
        reason: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes, path)?;

    // Reference layout from the spec, then fill with the stored values.
    let mut params = init_backbone(&sidecar.spec, 0)?;
    let expected: Vec<Vec<usize>> = params
        .tensors()
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    if expected.len() != tensors.len() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!(
                "checkpoint has {} tensors, spec needs {}",
                tensors.len(),
                expected.len()
            ),
        });
    }
    for (slot, (want, got)) in expected.iter().zip(&tensors).enumerate() {
        if want != got.shape() {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "tensor {slot} shape {:?} does not match spec shape {want:?}",
                    got.shape()
                ),
            });
        }
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(tensors) {
        *dst = src;
    }
    Ok((sidecar.spec, params))
}
