//! Parameter checkpoints.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! b"IRGNNCK1"  u32 tensor_count
//! per tensor:  u32 name_len  name (UTF-8)  u64 rows  u64 cols  rows*cols f64 (LE, row-major)
//! ```
//!
//! A companion text manifest lists `name<TAB>rows<TAB>cols` per tensor in the same order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::{Matrix, NnError, ParamStore, Result};

const MAGIC: &[u8; 8] = b"IRGNNCK1";

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + store.num_scalars() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, value) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for x in value.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn manifest(store: &ParamStore) -> String {
    store
        .iter()
        .map(|(_, name, v)| format!("{name}\t{}\t{}\n", v.nrows(), v.ncols()))
        .collect()
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| NnError::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

/// Decodes a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let mut r = bytes;
    if &read_array::<8>(&mut r)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if name_len > r.len() {
            return Err(NnError::Checkpoint("truncated name".into()));
        }
        let (name, rest) = r.split_at(name_len);
        let name = String::from_utf8(name.to_vec())
            .map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        r = rest;
        let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= r.len())
            .ok_or_else(|| NnError::Checkpoint(format!("tensor `{name}` truncated")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let m = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| NnError::Checkpoint(e.to_string()))?;
        out.push((name, m));
    }
    if !r.is_empty() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

/// Writes `<path>` (binary) and `<path>.manifest` (text).
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    fs::File::create(path)?.write_all(&encode(store))?;
    let mut manifest_path = path.as_os_str().to_owned();
    manifest_path.push(".manifest");
    fs::write(manifest_path, manifest(store))?;
    Ok(())
}

/// Overwrites every parameter of `store` with the tensor of the same name.
/// Names and shapes must match exactly.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let tensors = decode(&fs::read(path)?)?;
    if tensors.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, value) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown tensor `{name}`")))?;
        if store.get(id).dim() != value.dim() {
            return Err(NnError::shape("checkpoint load", store.get(id), &value));
        }
        *store.get_mut(id) = value;
    }
    Ok(())
}
