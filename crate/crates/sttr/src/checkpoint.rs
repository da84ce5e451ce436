//! Checkpoint serialization.
//!
//! Layout, all integers little-endian u32: magic `STTR`, format version,
//! entry count, then per tensor a length-prefixed UTF-8 name, rank plus
//! dims, and the f32 payload (little-endian bit patterns, so round-trips
//! are bitwise). Entries are written in name order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"STTR";
pub const VERSION: u32 = 1;

/// Caps accepted by the reader; anything larger is a corrupt length field.
const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_NUMEL: u64 = 1 << 30;

pub fn save(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut out = Vec::new();
    write_to(&mut out, tensors)?;
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_to(w: &mut impl Write, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = t.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &dim in &shape {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in t.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = std::fs::read(path)?;
    read_from(&mut bytes.as_slice())
}

pub fn read_from(r: &mut impl Read) -> Result<BTreeMap<String, Tensor>> {
    let magic = take::<4>(r, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointCorrupt(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, supported: VERSION });
    }
    let count = read_u32(r, "entry count")?;
    let mut tensors = BTreeMap::new();
    for i in 0..count {
        let name_len = read_u32(r, "name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::CheckpointCorrupt(format!(
                "entry {i}: name length {name_len} exceeds {MAX_NAME_LEN}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::CheckpointCorrupt(format!("entry {i}: truncated name")))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::CheckpointCorrupt(format!("entry {i}: name is not UTF-8")))?;

        let rank = read_u32(r, "rank")?;
        if rank > MAX_RANK {
            return Err(Error::CheckpointCorrupt(format!("`{name}`: rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let dim = read_u32(r, "dimension")?;
            numel = numel.saturating_mul(dim as u64);
            shape.push(dim as usize);
        }
        if numel > MAX_NUMEL {
            return Err(Error::CheckpointCorrupt(format!(
                "`{name}`: {numel} elements exceeds {MAX_NUMEL}"
            )));
        }
        let mut data = vec![0.0f32; numel as usize];
        for v in &mut data {
            *v = f32::from_le_bytes(
                take::<4>(r, "tensor data").map_err(|_| {
                    Error::CheckpointCorrupt(format!("`{name}`: truncated tensor data"))
                })?,
            );
        }
        if tensors.insert(name.clone(), Tensor::new(&shape, data)).is_some() {
            return Err(Error::CheckpointCorrupt(format!("duplicate tensor `{name}`")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::CheckpointCorrupt("trailing bytes after last entry".into()));
    }
    Ok(tensors)
}

fn take<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CheckpointCorrupt(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4>(r, what)?))
}

/// Copies loaded values into live parameters. The name sets must match
/// exactly and every shape must agree; the offending tensor is named.
pub fn apply(params: &BTreeMap<String, Tensor>, loaded: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, t) in params {
        let src = loaded.get(name).ok_or_else(|| Error::CheckpointShape {
            name: name.clone(),
            expected: t.shape().to_vec(),
            found: vec![],
        })?;
        if src.shape() != t.shape() {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: src.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = loaded.keys().find(|k| !params.contains_key(*k)) {
        return Err(Error::CheckpointCorrupt(format!(
            "checkpoint holds tensor `{extra}` the model does not have"
        )));
    }
    // validated above, now commit
    for (name, t) in params {
        t.set_data(&loaded[name].to_vec());
    }
    Ok(())
}
