//! `TGCK1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TGCK1"
//! u32 entry_count
//! per entry: u32 name_len, name (utf-8), u32 ndim, ndim × u64 dims, u64 byte_offset
//! data: concatenated f64 arrays; byte_offset is relative to the start of this section
//! ```

use std::fs;
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"TGCK1";

fn corrupt(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 8 * t.len() as u64;
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated manifest"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(corrupt("missing TGCK1 magic"));
    }
    let mut r = Reader {
        buf,
        pos: MAGIC.len(),
    };
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| corrupt("parameter name is not utf-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        manifest.push((name, shape, offset));
    }
    let data = &buf[r.pos..];
    manifest
        .into_iter()
        .map(|(name, shape, offset)| {
            let n: usize = shape.iter().product();
            let bytes = offset
                .checked_add(8 * n)
                .and_then(|end| data.get(offset..end))
                .ok_or_else(|| corrupt(format!("data for `{name}` is truncated")))?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok((name, Tensor::new(shape, values)?))
        })
        .collect()
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    fs::write(path, encode(store.named_values()))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

/// Overwrites the values of `store` from a checkpoint. Every parameter of the
/// store must be present with an identical shape, and the checkpoint may not
/// carry extra entries.
pub fn load_into(path: impl AsRef<Path>, store: &mut ParamStore) -> Result<()> {
    let entries = read(path)?;
    load_entries(entries, store)
}

pub fn load_entries(entries: Vec<(String, Tensor)>, store: &mut ParamStore) -> Result<()> {
    if entries.len() != store.len() {
        return Err(corrupt(format!(
            "checkpoint holds {} tensors, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store.id(&name)?;
        let current = store.value(id);
        if current.shape() != t.shape() {
            return Err(corrupt(format!(
                "`{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                current.shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}
