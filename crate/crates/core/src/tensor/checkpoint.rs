//! `ANGW` parameter checkpoints.
//!
//! Layout (little-endian): magic `ANGW`, version u32, tensor count u32, then per
//! tensor: name length u32, UTF-8 name, rank u32, dims (u32 each), f32 payload.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::binary::{read_f32s, read_u32, write_f32s};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ANGW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        write_f32s(&mut buf, t.data());
    }
    buf
}

pub fn write_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let bytes = encode_checkpoint(store);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Read every named tensor from a checkpoint, in file order.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|msg| Error::format(path, msg))
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| "truncated header")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format!("bad magic {magic:?}, expected ANGW"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if r.len() < len {
            return Err("truncated tensor name".into());
        }
        let name = std::str::from_utf8(&r[..len])
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_owned();
        r = &r[len..];
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let data = read_f32s(&mut r, n)?;
        let t = Tensor::new(&dims, data).map_err(|e| e.to_string())?;
        out.push((name, t));
    }
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    Ok(out)
}

impl ParamStore {
    /// Overwrite every entry from checkpoint tensors. Names and shapes must
    /// match this store exactly.
    pub fn load_tensors(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} tensors, model expects {}",
                tensors.len(),
                self.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint tensor `{name}` not in model")))?;
            if self.value(id).shape() != t.shape() {
                return Err(Error::shape(
                    "load_checkpoint",
                    format!(
                        "`{name}`: model {:?}, checkpoint {:?}",
                        self.value(id).shape(),
                        t.shape()
                    ),
                ));
            }
            *self.value_mut(id) = t;
        }
        Ok(())
    }
}
