//! On-disk cache of a compiled [`TermIndex`], keyed by the lexicon's content hash.
//!
//! Layout: 8-byte magic, u32 little-endian version, 32-byte SHA-256 of the
//! lexicon file, then the bincode-encoded index. Internal format; not stable.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::lexicon::TermIndex;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GENIEIDX";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 32;

pub type ContentHash = [u8; 32];

pub fn content_hash(bytes: &[u8]) -> ContentHash {
    Sha256::digest(bytes).into()
}

#[derive(Debug)]
pub enum CacheLookup {
    Hit(Box<TermIndex>),
    Missing,
    Stale,
    Corrupt(String),
}

pub fn read_cache(path: &Path, expected: &ContentHash) -> CacheLookup {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CacheLookup::Missing,
        Err(e) => return CacheLookup::Corrupt(e.to_string()),
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return CacheLookup::Corrupt("bad header".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return CacheLookup::Stale;
    }
    if &bytes[12..HEADER_LEN] != expected {
        return CacheLookup::Stale;
    }
    match bincode::deserialize::<TermIndex>(&bytes[HEADER_LEN..]) {
        Ok(index) => CacheLookup::Hit(Box::new(index)),
        Err(e) => CacheLookup::Corrupt(e.to_string()),
    }
}

pub fn write_cache(path: &Path, hash: &ContentHash, index: &TermIndex) -> Result<()> {
    let payload = bincode::serialize(index)
        .map_err(|e| Error::Contract(format!("index encoding failed: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(hash);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminology::{build_index, parse_lexicon};

    fn index() -> TermIndex {
        build_index(&parse_lexicon("fever\tC1\tSign, Symptom, or Finding\n", "t").unwrap().entries)
    }

    #[test]
    fn round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let h = content_hash(b"a");
        assert!(matches!(read_cache(&path, &h), CacheLookup::Missing));
        write_cache(&path, &h, &index()).unwrap();
        match read_cache(&path, &h) {
            CacheLookup::Hit(i) => assert_eq!(*i, index()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_cache(&path, &content_hash(b"b")), CacheLookup::Stale));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(read_cache(&path, &h), CacheLookup::Corrupt(_)));
    }
}
