//! Binary embedding file.
//!
//! ```text
//! magic      4 bytes   "TIEM"
//! version    u16 LE
//! name_len   u16 LE
//! name       name_len bytes, UTF-8
//! n_vectors  u32 LE
//! dim        u32 LE
//! payload    n_vectors * dim f32 LE, row-major
//! crc32      u32 LE over every preceding byte
//! ```

use std::path::Path;

use super::ConceptEmbedding;
use crate::error::{Error, FormatError, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"TIEM";
pub const EMBEDDING_VERSION: u16 = 1;

/// Byte size of an encoded embedding.
pub fn encoded_len(name_len: usize, n_vectors: usize, dim: usize) -> usize {
    4 + 2 + 2 + name_len + 4 + 4 + 4 * n_vectors * dim + 4
}

pub fn encode_embedding(embedding: &ConceptEmbedding) -> Vec<u8> {
    let name = embedding.name().as_bytes();
    let mut buf = Vec::with_capacity(encoded_len(name.len(), embedding.n_vectors(), embedding.dim()));
    buf.extend_from_slice(&EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&(embedding.n_vectors() as u32).to_le_bytes());
    buf.extend_from_slice(&(embedding.dim() as u32).to_le_bytes());
    for v in embedding.vectors() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_embedding(bytes: &[u8]) -> Result<ConceptEmbedding> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != EMBEDDING_MAGIC {
        return Err(FormatError::BadMagic {
            expected: EMBEDDING_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u16()?;
    if version != EMBEDDING_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            supported: EMBEDDING_VERSION,
        }
        .into());
    }
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|e| FormatError::Malformed(format!("name is not UTF-8: {e}")))?
        .to_owned();
    let n_vectors = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let count = n_vectors
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| FormatError::Malformed(format!("payload size overflows: {n_vectors}x{dim}")))?;
    let payload = r.take(count)?;
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let vectors = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ConceptEmbedding::from_vectors(&name, n_vectors, dim, vectors)
        .map_err(|e| Error::Format(FormatError::Malformed(e.to_string())))
}

pub fn save_embedding(embedding: &ConceptEmbedding, path: &Path) -> Result<()> {
    std::fs::write(path, encode_embedding(embedding))?;
    Ok(())
}

pub fn load_embedding(path: &Path) -> Result<ConceptEmbedding> {
    decode_embedding(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textual_inversion::{init_embedding, InitSource};
    use proptest::prelude::*;

    fn sample() -> ConceptEmbedding {
        init_embedding("healthy-prostate", 4, 3, &InitSource::RandomNormal { std: 1.0 }, 1).unwrap()
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tiem");
        let e = sample();
        save_embedding(&e, &path).unwrap();
        assert!(load_embedding(&path).unwrap().bit_eq(&e));
    }

    #[test]
    fn size_of_a_64_by_1024_embedding() {
        let e = init_embedding("prostate", 64, 1024, &InitSource::default(), 0).unwrap();
        let bytes = encode_embedding(&e);
        let header = 4 + 2 + 2 + "prostate".len() + 4 + 4;
        assert_eq!(bytes.len(), 64 * 1024 * 4 + header + 4);
        assert_eq!(64 * 1024 * 4, 256 * 1024);
        assert!(bytes.len() < 1_000_000);
    }

    #[test]
    fn distinct_errors_for_each_corruption() {
        let bytes = encode_embedding(&sample());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_embedding(&bad_magic),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode_embedding(&bad_version),
            Err(Error::Format(FormatError::VersionMismatch { found: 9, .. }))
        ));

        assert!(matches!(
            decode_embedding(&bytes[..bytes.len() - 7]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut flipped = bytes.clone();
        let mid = bytes.len() - 10;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            decode_embedding(&flipped),
            Err(Error::Format(FormatError::Checksum { .. }))
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_identity(
            n in 1usize..=8,
            dim in 1usize..=16,
            seed in any::<u64>(),
        ) {
            let e = init_embedding("c", n, dim, &InitSource::RandomNormal { std: 3.0 }, seed).unwrap();
            let back = decode_embedding(&encode_embedding(&e)).unwrap();
            prop_assert!(back.bit_eq(&e));
        }
    }
}
