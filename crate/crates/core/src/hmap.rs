//! `HMAP1` heatmap archive format.
//!
//! Layout (little-endian):
//! - magic `b"HMAP1\n"`
//! - record count: `u32`
//! - per record: width `u32`, height `u32`, then `width * height` `f32` values, row-major

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Heatmap;

pub const MAGIC: &[u8; 6] = b"HMAP1\n";

pub fn encode(maps: &[Heatmap]) -> Vec<u8> {
    let cells: usize = maps.iter().map(|m| m.values().len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + maps.len() * 8 + cells * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for m in maps {
        out.extend_from_slice(&(m.width() as u32).to_le_bytes());
        out.extend_from_slice(&(m.height() as u32).to_le_bytes());
        for &v in m.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Archive {
                offset: self.pos as u64,
                reason: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Heatmap>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Archive {
            offset: 0,
            reason: "bad magic, expected \"HMAP1\\n\"".into(),
        });
    }
    let count = cur.u32("record count")? as usize;
    let mut maps = Vec::with_capacity(count.min(1 << 16));
    for r in 0..count {
        let record_start = cur.pos as u64;
        let w = cur.u32("width")? as usize;
        let h = cur.u32("height")? as usize;
        let n = w.checked_mul(h).ok_or_else(|| Error::Archive {
            offset: record_start,
            reason: format!("record {r}: dimensions {w}x{h} overflow"),
        })?;
        let payload = cur.take(n.saturating_mul(4), "values")?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let map = Heatmap::new(w, h, values).map_err(|e| Error::Archive {
            offset: record_start,
            reason: format!("record {r}: {e}"),
        })?;
        maps.push(map);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Archive {
            offset: cur.pos as u64,
            reason: format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cur.pos
            ),
        });
    }
    Ok(maps)
}

pub fn write_file(path: &Path, maps: &[Heatmap]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(maps)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<Heatmap>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
