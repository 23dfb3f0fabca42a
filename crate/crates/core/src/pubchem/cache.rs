use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TextDescriptors;

/// Cached outcome of one lookup. Misses are cached as well so that reruns
/// see the same exclusions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CacheValue {
    Cid { cid: u64 },
    NotFound,
    Descriptors { descriptors: TextDescriptors },
    Incomplete { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub value: CacheValue,
    /// `None` means the entry never expires.
    pub ttl_seconds: Option<u64>,
}

/// One UTF-8 JSON-lines file per key under a snapshot directory.
///
/// Reads go through an in-memory index loaded at open; writes are
/// serialized by a mutex and land via write-to-temp + rename.
pub struct DiskCache {
    dir: PathBuf,
    index: Mutex<BTreeMap<String, CacheEntry>>,
}

fn file_name(key: &str) -> String {
    let digest = Sha256::digest(key.as_bytes());
    format!("{}.jsonl", hex::encode(&digest[..16]))
}

impl DiskCache {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<DiskCache> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut index = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            // the last well-formed line wins
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(entry) => {
                        index.insert(entry.key.clone(), entry);
                    }
                    Err(e) => log::warn!("skipping corrupt cache line in {}: {e}", path.display()),
                }
            }
        }
        Ok(DiskCache {
            dir,
            index: Mutex::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &str) -> Option<CacheValue> {
        self.index.lock().unwrap().get(key).map(|e| e.value.clone())
    }

    pub fn put(&self, key: &str, value: CacheValue) -> io::Result<()> {
        let entry = CacheEntry {
            key: key.to_string(),
            value,
            ttl_seconds: None,
        };
        let line = serde_json::to_string(&entry).map_err(io::Error::other)?;
        let mut index = self.index.lock().unwrap();
        let path = self.dir.join(file_name(key));
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, format!("{line}\n"))?;
        fs::rename(&tmp, &path)?;
        index.insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Content hash of every entry, identifying the snapshot.
    pub fn snapshot_id(&self) -> String {
        let index = self.index.lock().unwrap();
        let mut h = Sha256::new();
        for entry in index.values() {
            h.update(serde_json::to_string(entry).unwrap_or_default().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pubchem::descriptors::tests::methane;

    #[test]
    fn store_then_reopen_is_field_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        let d = methane();
        cache
            .put("cid:297", CacheValue::Descriptors { descriptors: d.clone() })
            .unwrap();
        cache.put("inchi:InChI=1S/XX", CacheValue::NotFound).unwrap();
        let id = cache.snapshot_id();
        drop(cache);

        let reopened = DiskCache::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(
            reopened.get("cid:297"),
            Some(CacheValue::Descriptors { descriptors: d })
        );
        assert_eq!(reopened.get("inchi:InChI=1S/XX"), Some(CacheValue::NotFound));
        assert_eq!(reopened.snapshot_id(), id);
    }

    #[test]
    fn corrupt_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("junk.jsonl"), "not json\n").unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        assert!(cache.is_empty());
    }
}
