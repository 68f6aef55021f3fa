//! Binary checkpoint: magic, version, JSON metadata, catalog hash, then
//! named little-endian `f32` blobs.

use std::io::{Read, Write};
use std::path::Path;

use lipt_autodiff::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use super::config::PseConfig;
use super::data::Standardizer;
use super::model::PseModel;
use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 8] = b"LIPTCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: PseConfig,
    global_indices: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_blob(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_bytes(out, name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &PseModel) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = Meta {
        config: model.config.clone(),
        global_indices: model.global_indices.clone(),
    };
    put_bytes(&mut out, &serde_json::to_vec(&meta)?);
    put_bytes(&mut out, model.catalog_hash.as_bytes());
    let mut blobs: Vec<(String, Vec<usize>, &[f64])> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data()))
        .collect();
    for (prefix, norm) in [("norm.frame", &model.frame_norm), ("norm.global", &model.global_norm)] {
        if let Some(s) = norm {
            blobs.push((format!("{prefix}.mean"), vec![s.mean.len()], &s.mean));
            blobs.push((format!("{prefix}.std"), vec![s.std.len()], &s.std));
        }
    }
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, shape, data) in blobs {
        put_blob(&mut out, &name, &shape, data);
    }
    Ok(out)
}

pub fn save_checkpoint(model: &PseModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

/// Parses a checkpoint, refusing it when its catalog hash differs from
/// `expected_hash`.
pub fn decode_checkpoint(buf: &[u8], expected_hash: &str) -> Result<PseModel> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta: Meta = serde_json::from_slice(c.bytes()?)?;
    let hash = String::from_utf8(c.bytes()?.to_vec()).map_err(|_| bad("catalog hash is not UTF-8"))?;
    if hash != expected_hash {
        return Err(CoreError::CatalogMismatch {
            expected: expected_hash.to_string(),
            found: hash,
        });
    }
    let n = c.u32()? as usize;
    let mut params = ParamSet::new();
    let mut norms: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for _ in 0..n {
        let name = String::from_utf8(c.bytes()?.to_vec()).map_err(|_| bad("blob name is not UTF-8"))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| Ok(c.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(4).ok_or_else(|| bad("blob too large"))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        if name.starts_with("norm.") {
            norms.insert(name, data);
        } else {
            params.add(name, Tensor::new(&shape, data)?);
        }
    }
    if c.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    let mut take_norm = |prefix: &str| -> Option<Standardizer> {
        let mean = norms.remove(&format!("{prefix}.mean"))?;
        let std = norms.remove(&format!("{prefix}.std"))?;
        Some(Standardizer { mean, std })
    };
    let frame = take_norm("norm.frame");
    let global = take_norm("norm.global");
    PseModel::from_parts(meta.config, hash, meta.global_indices, params, frame, global)
}

pub fn load_checkpoint(path: &Path, expected_hash: &str) -> Result<PseModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf, expected_hash)
}
