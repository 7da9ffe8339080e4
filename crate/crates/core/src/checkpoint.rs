//! Named-tensor checkpoints.
//!
//! Binary layout, repeated per record, all integers little-endian `u32`:
//! name length, UTF-8 name, rank, each dimension, then the `f64` payload.
//! A `.json` sidecar lists names and shapes for inspection.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn u32_of(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("{what} {n} does not fit in u32")))
}

pub fn encode(records: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (name, t) in records {
        out.extend(u32_of(name.len(), "name length")?);
        out.extend(name.as_bytes());
        out.extend(u32_of(t.rank(), "rank")?);
        for &d in t.shape() {
            out.extend(u32_of(d, "dimension")?);
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes records and their JSON sidecar.
pub fn write_checkpoint(path: &Path, records: &[(&str, &Tensor)]) -> Result<()> {
    std::fs::write(path, encode(records)?).map_err(|e| Error::io(path, e))?;
    let info: Vec<RecordInfo> = records
        .iter()
        .map(|(n, t)| RecordInfo {
            name: n.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&info)?).map_err(|e| Error::io(&side, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
