//! Binary cache of [`GaussianStats`].
//!
//! ```text
//! magic        4 bytes  "GSTC"
//! version      u16 LE
//! id_len       u16 LE, then the extractor id (UTF-8)
//! hash_len     u16 LE, then the input hash (UTF-8)
//! feature_dim  u64 LE
//! n            u64 LE
//! mu           feature_dim f64 LE
//! sigma        feature_dim^2 f64 LE, row-major
//! crc32        u32 LE over every preceding byte
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::GaussianStats;
use crate::error::{Error, FormatError, Result};

pub const STATS_MAGIC: [u8; 4] = *b"GSTC";
pub const STATS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CachedStats {
    pub extractor_id: String,
    /// Hash of the image set the statistics were computed from.
    pub input_hash: String,
    pub stats: GaussianStats,
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::invalid("string too long for stats cache"))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_stats(c: &CachedStats) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&STATS_MAGIC);
    buf.extend_from_slice(&STATS_VERSION.to_le_bytes());
    put_str(&mut buf, &c.extractor_id)?;
    put_str(&mut buf, &c.input_hash)?;
    let d = c.stats.dim();
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    buf.extend_from_slice(&(c.stats.n as u64).to_le_bytes());
    for v in c.stats.mu.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in 0..d {
        for col in 0..d {
            buf.extend_from_slice(&c.stats.sigma[(r, col)].to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(FormatError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            }),
        }
    }

    fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, FormatError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| FormatError::Malformed("stats size overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> std::result::Result<String, FormatError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| FormatError::Malformed(e.to_string()))
    }
}

pub fn decode_stats(bytes: &[u8]) -> Result<CachedStats> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != STATS_MAGIC {
        return Err(FormatError::BadMagic {
            expected: STATS_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = c.u16()?;
    if version != STATS_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            supported: STATS_VERSION,
        }
        .into());
    }
    let extractor_id = c.string()?;
    let input_hash = c.string()?;
    let d = c.u64()? as usize;
    let n = c.u64()? as usize;
    let mu = c.f64s(d)?;
    let sigma = c.f64s(d.checked_mul(d).ok_or_else(|| FormatError::Malformed("dim overflows".into()))?)?;
    let body = c.pos;
    let stored = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if c.pos != bytes.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - c.pos)).into());
    }
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let stats = GaussianStats::new(DVector::from_vec(mu), DMatrix::from_row_slice(d, d, &sigma), n)?;
    Ok(CachedStats {
        extractor_id,
        input_hash,
        stats,
    })
}

pub fn save_stats(c: &CachedStats, path: &Path) -> Result<()> {
    std::fs::write(path, encode_stats(c)?)?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<CachedStats> {
    decode_stats(&std::fs::read(path)?)
}
