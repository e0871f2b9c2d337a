//! Stored process descriptions, looked up by name or by source URL.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_pd_with, render_pd, ProcessDescription};
use crate::dsl::Diagnostic;
use crate::schema::SynonymTable;
use crate::text::link_key;

const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{diagnostic}")]
    Parse { path: PathBuf, diagnostic: Diagnostic },
    #[error("a process named `{0}` already exists")]
    Duplicate(String),
    #[error("process `{name}` has an unusable url `{url}`")]
    BadUrl { name: String, url: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    file: String,
    host: String,
    path: String,
}

#[derive(Debug, Clone, Default)]
pub struct ProcessKB {
    entries: BTreeMap<String, ProcessDescription>,
    dir: Option<PathBuf>,
}

fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.pd")
}

impl ProcessKB {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `.pd` file in `dir` (created when missing). Later
    /// inserts are written back there.
    pub fn open(dir: &Path, synonyms: &SynonymTable) -> Result<Self, KbError> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "pd"))
            .collect();
        files.sort();
        let mut kb = ProcessKB::new();
        for path in files {
            let text = std::fs::read_to_string(&path).map_err(io(&path))?;
            let pd = parse_pd_with(&text, synonyms).map_err(|diagnostic| KbError::Parse {
                path: path.clone(),
                diagnostic,
            })?;
            kb.insert_entry(pd)?;
        }
        kb.dir = Some(dir.to_path_buf());
        kb.write_index()?;
        Ok(kb)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn insert_entry(&mut self, pd: ProcessDescription) -> Result<(), KbError> {
        if link_key(&pd.url).is_none() {
            return Err(KbError::BadUrl {
                name: pd.name.clone(),
                url: pd.url.clone(),
            });
        }
        if self.entries.contains_key(&pd.name) {
            return Err(KbError::Duplicate(pd.name));
        }
        self.entries.insert(pd.name.clone(), pd);
        Ok(())
    }

    /// Adds a description, persisting it when the KB is directory-backed.
    pub fn insert(&mut self, pd: ProcessDescription) -> Result<(), KbError> {
        let text = render_pd(&pd);
        let name = pd.name.clone();
        self.insert_entry(pd)?;
        if let Some(dir) = &self.dir {
            let path = dir.join(file_name(&name));
            if let Err(e) = std::fs::write(&path, text) {
                self.entries.remove(&name);
                return Err(io(&path)(e));
            }
            self.write_index()?;
        }
        Ok(())
    }

    fn write_index(&self) -> Result<(), KbError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let index: Vec<IndexEntry> = self
            .entries
            .values()
            .filter_map(|pd| {
                let (host, path) = link_key(&pd.url)?;
                Some(IndexEntry {
                    name: pd.name.clone(),
                    file: file_name(&pd.name),
                    host,
                    path,
                })
            })
            .collect();
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(&path, text).map_err(io(&path))
    }

    pub fn get(&self, name: &str) -> Option<&ProcessDescription> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProcessDescription> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn segments(path: &str) -> Vec<&str> {
    path.split('/').filter(|s| !s.is_empty()).collect()
}

/// The entry on the same host (ignoring case and `www.`) sharing the most
/// leading path segments with `data_link`; ties go to the smaller name.
pub fn kb_lookup<'k>(kb: &'k ProcessKB, data_link: &str) -> Option<&'k ProcessDescription> {
    let (host, path) = link_key(data_link)?;
    let want = segments(&path);
    kb.entries
        .values()
        .filter_map(|pd| {
            let (h, p) = link_key(&pd.url)?;
            if h != host {
                return None;
            }
            let common = segments(&p).iter().zip(&want).take_while(|(a, b)| a == b).count();
            Some((common, pd))
        })
        // entries iterate in name order, so the first maximum wins ties
        .fold(None, |best: Option<(usize, &ProcessDescription)>, (n, pd)| match best {
            Some((b, _)) if b >= n => best,
            _ => Some((n, pd)),
        })
        .map(|(_, pd)| pd)
}

/// A KB shared by concurrent readers with serialized writes.
#[derive(Debug, Clone, Default)]
pub struct SharedKb(Arc<RwLock<ProcessKB>>);

impl SharedKb {
    pub fn new(kb: ProcessKB) -> Self {
        Self(Arc::new(RwLock::new(kb)))
    }

    pub fn read(&self) -> parking_lot::RwLockReadGuard<'_, ProcessKB> {
        self.0.read()
    }

    pub fn insert(&self, pd: ProcessDescription) -> Result<(), KbError> {
        self.0.write().insert(pd)
    }

    pub fn lookup(&self, data_link: &str) -> Option<ProcessDescription> {
        kb_lookup(&self.0.read(), data_link).cloned()
    }
}
