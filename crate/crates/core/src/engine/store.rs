//! Persistence of runs keyed by id.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use thiserror::Error;

use super::StoredRun;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

/// Whole-run reads and writes. A write replaces the stored run atomically,
/// so concurrent readers always see a complete earlier or later version.
pub trait RunStore: Send + Sync {
    fn put(&self, run: &StoredRun) -> Result<(), StoreError>;
    fn get(&self, id: &str) -> Result<Option<StoredRun>, StoreError>;
    fn ids(&self) -> Result<Vec<String>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    runs: RwLock<HashMap<String, StoredRun>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RunStore for MemoryStore {
    fn put(&self, run: &StoredRun) -> Result<(), StoreError> {
        self.runs.write().insert(run.run.id.clone(), run.clone());
        Ok(())
    }

    fn get(&self, id: &str) -> Result<Option<StoredRun>, StoreError> {
        Ok(self.runs.read().get(id).cloned())
    }

    fn ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = self.runs.read().keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

/// One JSON file per run in a directory; survives restarts.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl FileStore {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }
}

impl RunStore for FileStore {
    fn put(&self, run: &StoredRun) -> Result<(), StoreError> {
        let path = self.path(&run.run.id);
        let tmp = self.dir.join(format!(".{}.tmp", run.run.id));
        let text = serde_json::to_vec(run).map_err(|e| StoreError::Format {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        std::fs::write(&tmp, text).map_err(|source| StoreError::Io {
            path: tmp.clone(),
            source,
        })?;
        std::fs::rename(&tmp, &path).map_err(|source| StoreError::Io { path, source })
    }

    fn get(&self, id: &str) -> Result<Option<StoredRun>, StoreError> {
        if !valid_id(id) {
            return Ok(None);
        }
        let path = self.path(id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Format {
            path,
            detail: e.to_string(),
        })
    }

    fn ids(&self) -> Result<Vec<String>, StoreError> {
        let entries = std::fs::read_dir(&self.dir).map_err(|source| StoreError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".json").filter(|s| valid_id(s)).map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
