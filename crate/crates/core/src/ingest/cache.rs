use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IngestError;

/// One stored API payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub endpoint: String,
    pub ids: Vec<String>,
    pub fetched_at: u64,
    pub payload: serde_json::Value,
}

/// Hex sha256 of the endpoint and its sorted ids.
pub fn cache_key(endpoint: &str, ids: &[String]) -> String {
    let mut sorted: Vec<&str> = ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    h.update(endpoint.as_bytes());
    for id in sorted {
        h.update([0u8]);
        h.update(id.as_bytes());
    }
    hex::encode(h.finalize())
}

/// On-disk content-addressed response cache. Entries never expire.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| IngestError::Io(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, endpoint: &str, ids: &[String]) -> Option<CacheEntry> {
        let text = std::fs::read_to_string(self.path(&cache_key(endpoint, ids))).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.endpoint == endpoint).then_some(entry)
    }

    /// Writes through a temporary file; concurrent writers of one key leave
    /// whichever finished last.
    pub fn put(&self, endpoint: &str, ids: &[String], payload: &serde_json::Value) -> Result<(), IngestError> {
        let key = cache_key(endpoint, ids);
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let entry = CacheEntry {
            endpoint: endpoint.to_string(),
            ids: sorted,
            fetched_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            payload: payload.clone(),
        };
        let io = |e: std::io::Error| IngestError::Io(e.to_string());
        let tmp = self.dir.join(format!(".{key}.{:?}.tmp", std::thread::current().id()));
        std::fs::write(&tmp, serde_json::to_vec(&entry).map_err(|e| IngestError::Io(e.to_string()))?).map_err(io)?;
        std::fs::rename(&tmp, self.path(&key)).map_err(io)
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn entries(&self) -> Vec<PathBuf> {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Removes every entry; returns how many were deleted.
    pub fn purge(&self) -> Result<usize, IngestError> {
        let files = self.entries();
        for f in &files {
            std::fs::remove_file(f).map_err(|e| IngestError::Io(format!("{}: {e}", f.display())))?;
        }
        Ok(files.len())
    }
}
