//! Binary parameter checkpoints with a JSON manifest alongside.
//!
//! Layout: the 8-byte magic `DSTRCKPT`, a little-endian `u32` version, a
//! `u32` tensor count, then per tensor its name (`u32` length + UTF-8) and
//! shape (`u32` rank + `u64` extents), followed by every parameter as a
//! little-endian `f64` in tensor order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DestripeNetwork;
use crate::error::{DestripeError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DSTRCKPT";

/// Every learnable parameter of the unrolled model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// One network per unrolled iteration (a single one when tied).
    pub nets: Vec<DestripeNetwork>,
    /// Unconstrained scalars behind `mu_k = softplus(mu_raw[k])`.
    pub mu_raw: Vec<f64>,
    /// Unconstrained scalars behind `alpha_k = softplus(alpha_raw[k])`.
    pub alpha_raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub parameter_count: usize,
    pub unroll_k: usize,
    pub networks: usize,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (k, net) in self.nets.iter().enumerate() {
            v.extend(net.tensor_shapes(&format!("net{k}.")));
        }
        v.push(("mu_raw".into(), vec![self.mu_raw.len()]));
        v.push(("alpha_raw".into(), vec![self.alpha_raw.len()]));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.nets.iter().map(|n| n.parameter_count()).sum::<usize>()
            + self.mu_raw.len()
            + self.alpha_raw.len()
    }

    /// All parameters in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        for net in &self.nets {
            v.extend(net.flatten());
        }
        v.extend(&self.mu_raw);
        v.extend(&self.alpha_raw);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(DestripeError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for net in &mut self.nets {
            let n = net.parameter_count();
            net.load_flat(&flat[at..at + n])?;
            at += n;
        }
        let k = self.mu_raw.len();
        self.mu_raw.copy_from_slice(&flat[at..at + k]);
        at += k;
        let k = self.alpha_raw.len();
        self.alpha_raw.copy_from_slice(&flat[at..at + k]);
        Ok(())
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format: "destripe-checkpoint".into(),
            version: CHECKPOINT_VERSION,
            parameter_count: self.parameter_count(),
            unroll_k: self.mu_raw.len(),
            networks: self.nets.len(),
            tensors: self
                .tensor_shapes()
                .into_iter()
                .map(|(name, shape)| TensorEntry { name, shape })
                .collect(),
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let shapes = ckpt.tensor_shapes();
    buf.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (name, shape) in &shapes {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for x in ckpt.flatten() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| DestripeError::io(path, e))?;
    let manifest = serde_json::to_string_pretty(&ckpt.manifest()).expect("manifest serializes");
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|e| DestripeError::io(&mpath, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(DestripeError::Checkpoint("file is truncated".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads parameters into a copy of `template`, whose architecture must
/// match the stored tensor names and shapes exactly.
pub fn load_checkpoint(path: &Path, template: &Checkpoint) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| DestripeError::io(path, e))?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(DestripeError::Checkpoint(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DestripeError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let expected = template.tensor_shapes();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(DestripeError::Checkpoint(format!(
            "checkpoint has {count} tensors, configuration expects {}",
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        let len = r.u32()? as usize;
        let found = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| DestripeError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &found != name || &dims != shape {
            return Err(DestripeError::Checkpoint(format!(
                "tensor {found} {dims:?} does not match expected {name} {shape:?}"
            )));
        }
    }
    let n = template.parameter_count();
    let data = r.take(8 * n)?;
    if r.at != buf.len() {
        return Err(DestripeError::Checkpoint(
            "trailing bytes after parameters".into(),
        ));
    }
    let flat: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut out = template.clone();
    out.load_flat(&flat)?;
    Ok(out)
}
