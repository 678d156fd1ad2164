//! On-disk cache of derived per-case results.
//!
//! Layout: `<root>/<case_id>/<key>.bin` plus `<root>/<case_id>/index.json`.
//! The key mixes the input content hash with the model version, so entries for
//! stale inputs are simply never looked up again.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::{content_hash, is_safe_id, IngestError, Result};

const MAGIC: &[u8; 8] = b"CTVCACHE";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub case_id: String,
    pub content_hash: u64,
    pub model_version: String,
}

impl CacheKey {
    pub fn file_stem(&self) -> String {
        format!("{:016x}", content_hash(&[&self.content_hash.to_le_bytes(), self.model_version.as_bytes()]))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    entries: BTreeMap<String, IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    content_hash: String,
    model_version: String,
    bytes: usize,
}

/// Process-wide writer locks, one per case directory.
fn case_lock(dir: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(dir.to_path_buf()).or_default().clone()
}

#[derive(Debug, Clone)]
pub struct DerivedCache {
    root: PathBuf,
}

impl DerivedCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn case_dir(&self, case_id: &str) -> Result<PathBuf> {
        if !is_safe_id(case_id) {
            return Err(IngestError::InvalidId(case_id.to_string()));
        }
        Ok(self.root.join(case_id))
    }

    pub fn entry_path(&self, key: &CacheKey) -> Result<PathBuf> {
        Ok(self.case_dir(&key.case_id)?.join(format!("{}.bin", key.file_stem())))
    }

    /// Persist `payload` under `key`. Last writer wins; the write is atomic.
    pub fn store(&self, key: &CacheKey, payload: &[u8]) -> Result<PathBuf> {
        let dir = self.case_dir(&key.case_id)?;
        let lock = case_lock(&dir);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        std::fs::create_dir_all(&dir).map_err(|e| IngestError::CacheUnwritable(dir.clone(), e))?;

        let mut buf = Vec::with_capacity(payload.len() + 64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&key.content_hash.to_le_bytes());
        buf.extend_from_slice(&(key.model_version.len() as u32).to_le_bytes());
        buf.extend_from_slice(key.model_version.as_bytes());
        buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        buf.extend_from_slice(payload);
        buf.extend_from_slice(&content_hash(&[payload]).to_le_bytes());

        let path = dir.join(format!("{}.bin", key.file_stem()));
        write_atomic(&path, &buf).map_err(|e| IngestError::CacheUnwritable(dir.clone(), e))?;

        let index_path = dir.join("index.json");
        let mut index: Index = std::fs::read(&index_path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        index.entries.insert(
            key.file_stem(),
            IndexEntry {
                content_hash: format!("{:016x}", key.content_hash),
                model_version: key.model_version.clone(),
                bytes: payload.len(),
            },
        );
        let json = serde_json::to_vec_pretty(&index).expect("index serializes");
        write_atomic(&index_path, &json).map_err(|e| IngestError::CacheUnwritable(dir, e))?;
        Ok(path)
    }

    /// Fetch the payload for `key`. A missing entry is `Ok(None)`; an entry whose
    /// recorded hash, model version or checksum disagrees is logged and ignored.
    pub fn load(&self, key: &CacheKey) -> Result<Option<Vec<u8>>> {
        let path = self.entry_path(key)?;
        let Ok(bytes) = std::fs::read(&path) else { return Ok(None) };
        match decode_entry(&bytes, key) {
            Ok(payload) => Ok(Some(payload)),
            Err(reason) => {
                log::warn!("ignoring cache entry {}: {reason}", path.display());
                Ok(None)
            }
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn decode_entry(bytes: &[u8], key: &CacheKey) -> std::result::Result<Vec<u8>, String> {
    let mut at = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = bytes.get(at..at + n).ok_or("truncated entry")?;
        at += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("format version {version}"));
    }
    let hash = u64::from_le_bytes(take(8)?.try_into().unwrap());
    if hash != key.content_hash {
        return Err(format!("content hash mismatch ({hash:016x} != {:016x})", key.content_hash));
    }
    let mv_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if take(mv_len)? != key.model_version.as_bytes() {
        return Err("model version mismatch".into());
    }
    let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let payload = take(len)?.to_vec();
    let check = u64::from_le_bytes(take(8)?.try_into().unwrap());
    if check != content_hash(&[&payload]) {
        return Err("payload checksum mismatch".into());
    }
    Ok(payload)
}
