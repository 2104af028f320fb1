//! Binary embedding cache keyed by (provider tag, SHA-256 of text).
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "PCODEMB\0" | version u32 | entry count u64
//! per entry: tag len u32 | tag bytes | text hash [u8; 32] | dim u32 | dim x f64
//! trailer: SHA-256 of every preceding byte
//! ```
//!
//! Entries are written in key order so identical contents give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::EmbedError;

const MAGIC: &[u8; 8] = b"PCODEMB\0";
const VERSION: u32 = 1;

type Key = (String, [u8; 32]);

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    entries: BTreeMap<Key, Vec<f64>>,
    dirty: bool,
}

impl EmbeddingCache {
    /// Opens the cache at `path`; a missing file is an empty cache.
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let entries = match fs::read(path) {
            Ok(bytes) => decode(&bytes).map_err(|reason| EmbedError::CacheCorrupt {
                path: path.to_path_buf(),
                reason,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => {
                return Err(EmbedError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        Ok(Self {
            path: path.to_path_buf(),
            entries,
            dirty: false,
        })
    }

    pub fn get(&self, provider_tag: &str, text_hash: &[u8; 32]) -> Option<&[f64]> {
        self.entries
            .get(&(provider_tag.to_string(), *text_hash))
            .map(Vec::as_slice)
    }

    pub fn insert(&mut self, provider_tag: &str, text_hash: [u8; 32], values: Vec<f64>) {
        self.entries.insert((provider_tag.to_string(), text_hash), values);
        self.dirty = true;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the cache if it changed, via a temp file and rename.
    pub fn save(&mut self) -> Result<(), EmbedError> {
        if !self.dirty {
            return Ok(());
        }
        let io = |source| EmbedError::Io {
            path: self.path.clone(),
            source,
        };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let tmp = self.path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&encode(&self.entries)).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, &self.path).map_err(io)?;
        self.dirty = false;
        Ok(())
    }
}

fn encode(entries: &BTreeMap<Key, Vec<f64>>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for ((tag, hash), values) in entries {
        buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        buf.extend_from_slice(tag.as_bytes());
        buf.extend_from_slice(hash);
        buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = Sha256::digest(&buf);
    buf.extend_from_slice(&checksum);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<BTreeMap<Key, Vec<f64>>, String> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err("file too short".into());
    }
    if &bytes[..8] != MAGIC {
        return Err("bad magic header".into());
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u64()?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let tag_len = r.u32()? as usize;
        let tag = std::str::from_utf8(r.take(tag_len)?)
            .map_err(|e| e.to_string())?
            .to_string();
        let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let dim = r.u32()? as usize;
        let raw = r.take(dim.checked_mul(8).ok_or("dimension overflow")?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.insert((tag, hash), values);
    }
    if r.pos != body.len() {
        return Err("trailing bytes after entries".into());
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let mut c = EmbeddingCache::open(&path).unwrap();
        assert!(c.is_empty());
        c.insert("t", [7u8; 32], vec![0.6, 0.8]);
        c.save().unwrap();
        let c2 = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c2.get("t", &[7u8; 32]), Some(&[0.6, 0.8][..]));
        assert_eq!(c2.get("other", &[7u8; 32]), None);
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let mut c = EmbeddingCache::open(&path).unwrap();
        c.insert("t", [1u8; 32], vec![1.0, 0.0, 0.0]);
        c.save().unwrap();

        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let err = EmbeddingCache::open(&path).unwrap_err();
        assert!(matches!(err, EmbedError::CacheCorrupt { .. }), "{err}");

        fs::write(&path, b"garbage that is long enough to pass the length check......").unwrap();
        assert!(matches!(
            EmbeddingCache::open(&path),
            Err(EmbedError::CacheCorrupt { .. })
        ));
    }
}
