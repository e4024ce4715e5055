//! `HIRECKPT` files: magic, format version, the model description as JSON,
//! then every parameter as `(name, shape, f32 values)`. All integers are
//! little-endian `u32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hyper::HyperParams;
use super::pipeline::HireModel;
use crate::error::{HireError, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HIRECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    hyper: HyperParams,
    region_dim: usize,
    word_dim: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| HireError::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a model to bytes.
pub fn checkpoint_bytes(model: &HireModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
    let header = serde_json::to_vec(&Header {
        hyper: model.hyper.clone(),
        region_dim: model.region_dim,
        word_dim: model.word_dim,
    })?;
    put_u32(&mut out, header.len())?;
    out.extend_from_slice(&header);
    put_u32(&mut out, model.store.len())?;
    for (name, t) in model.store.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &HireModel, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let mut f = fs::File::create(path).map_err(|e| HireError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| HireError::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HireError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Rebuilds a model from checkpoint bytes. The parameter list must match
/// the layout implied by the stored settings exactly.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<HireModel> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(HireError::Checkpoint("missing HIRECKPT magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(HireError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = c.u32()?;
    let header: Header = serde_json::from_slice(c.take(hlen)?)?;
    let dtype = header.hyper.dtype;
    let mut model = HireModel::new(header.hyper, header.region_dim, header.word_dim, 0)?;
    let count = c.u32()?;
    if count != model.store.len() {
        return Err(HireError::Checkpoint(format!(
            "{count} parameters stored, the model has {}",
            model.store.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let nlen = c.u32()?;
        let name = String::from_utf8(c.take(nlen)?.to_vec())
            .map_err(|_| HireError::Checkpoint("parameter name is not UTF-8".into()))?;
        if !seen.insert(name.clone()) {
            return Err(HireError::Checkpoint(format!("{name} stored twice")));
        }
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let slot = model
            .store
            .get_mut(&name)
            .ok_or_else(|| HireError::UnknownParam(name.clone()))?;
        if slot.shape() != shape.as_slice() {
            return Err(HireError::Checkpoint(format!(
                "{name}: stored shape {shape:?}, model expects {:?}",
                slot.shape()
            )));
        }
        *slot = Tensor::new(&shape, data)?.with_dtype(dtype).requiring_grad();
    }
    if c.pos != bytes.len() {
        return Err(HireError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<HireModel> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| HireError::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
