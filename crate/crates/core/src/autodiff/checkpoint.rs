//! Binary parameter checkpoints.
//!
//! Layout, little-endian throughout: magic `RTWC`, `u32` version, `u32`
//! parameter count, then per parameter `u32` name length, UTF-8 name, `u32`
//! rank, `u32` dims, and `f32` data.

use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RTWC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.numel() * 4);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity {
                path: self.path.to_path_buf(),
                detail: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    let corrupt = |detail: String| Error::Integrity {
        path: path.to_path_buf(),
        detail,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt(format!("{name}: oversized shape")))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.add(name, Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Copies values from `loaded` into `params`, matching by name and shape.
pub fn restore_into(params: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if params.len() != loaded.len() {
        return Err(Error::invalid(format!(
            "checkpoint has {} parameters, model expects {}",
            loaded.len(),
            params.len()
        )));
    }
    for id in params.ids().collect::<Vec<_>>() {
        let name = params.name(id).to_string();
        let src = loaded
            .find(&name)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {name}")))?;
        let src = loaded.get(src);
        if src.shape() != params.get(id).shape() {
            return Err(Error::shape(
                "restore",
                format!("{name}: checkpoint {:?} vs model {:?}", src.shape(), params.get(id).shape()),
            ));
        }
        params.get_mut(id).data_mut().copy_from_slice(src.data());
    }
    Ok(())
}
