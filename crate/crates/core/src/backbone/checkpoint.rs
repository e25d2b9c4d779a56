//! Binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"AFM1"                 magic + format version
//! u64                     config hash
//! u32                     entry count
//! per entry:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank x u64 dims
//!   prod(dims) x f64 values
//! ```
//!
//! The same container holds model checkpoints and exported datasets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AFM1";

/// The first 8 bytes of SHA-256 over `text`, read little-endian.
pub fn config_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn write_tensors<W: Write>(mut w: W, hash: u64, entries: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&hash.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<(u64, Vec<(String, Tensor)>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let hash = read_u64(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Format(format!("parameter name is not UTF-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: shape {shape:?} overflows")))?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok((hash, entries))
}

pub fn save(path: &Path, hash: u64, params: &ParamStore) -> Result<()> {
    let entries: Vec<(&str, &Tensor)> = params.iter().collect();
    write_tensors(BufWriter::new(File::create(path)?), hash, &entries)
}

pub fn load(path: &Path) -> Result<(u64, Vec<(String, Tensor)>)> {
    read_tensors(BufReader::new(File::open(path)?))
}
