//! Where with-clause tables come from.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::WithClause;
use crate::process::{kb_lookup, run_pd, ProcessKB};
use crate::query::QueryBundle;
use crate::schema::SynonymTable;
use crate::table::DataTable;
use crate::text::link_key;
use crate::wrapper::{smart_wrap, WrapContext, WrapOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Materialized {
    pub table: DataTable,
    /// The source used the binding term as a search filter, so rows already
    /// satisfy the predicate it came from.
    pub consumed_binding: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{class}: {message}")]
pub struct SourceError {
    pub class: String,
    pub message: String,
}

pub trait TableSource: Sync {
    fn materialize(&self, clause: &WithClause, binding: Option<&str>) -> Result<Materialized, SourceError>;
}

/// Tables held in memory, found by alias or else by source URL.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    by_alias: HashMap<String, DataTable>,
    by_link: HashMap<(String, String), DataTable>,
    consuming: bool,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_alias(mut self, alias: &str, table: DataTable) -> Self {
        self.by_alias.insert(alias.to_lowercase(), table);
        self
    }

    pub fn with_link(mut self, link: &str, table: DataTable) -> Self {
        if let Some(key) = link_key(link) {
            self.by_link.insert(key, table);
        }
        self
    }

    /// Marks the tables as already filtered by the binding term (they were
    /// fetched with it).
    pub fn consuming(mut self, consuming: bool) -> Self {
        self.consuming = consuming;
        self
    }
}

impl TableSource for MemorySource {
    fn materialize(&self, clause: &WithClause, _binding: Option<&str>) -> Result<Materialized, SourceError> {
        let table = self
            .by_alias
            .get(&clause.alias.to_lowercase())
            .or_else(|| link_key(&clause.extract.source_url).and_then(|k| self.by_link.get(&k)))
            .ok_or_else(|| SourceError {
                class: "missing_table".into(),
                message: format!("no table for `{}` ({})", clause.alias, clause.extract.source_url),
            })?;
        Ok(Materialized {
            table: table.clone(),
            consumed_binding: self.consuming,
        })
    }
}

/// Fetches each clause's source: a stored process description when one
/// covers the URL, otherwise the smart wrapper.
pub struct LiveSource<'a> {
    pub ctx: WrapContext<'a>,
    pub kb: &'a ProcessKB,
    pub synonyms: &'a SynonymTable,
    /// Search term for clauses without a binding.
    pub default_term: String,
}

impl TableSource for LiveSource<'_> {
    fn materialize(&self, clause: &WithClause, binding: Option<&str>) -> Result<Materialized, SourceError> {
        let term = binding.unwrap_or(&self.default_term);
        let url = &clause.extract.source_url;
        let table = if let Some(pd) = kb_lookup(self.kb, url) {
            run_pd(pd, term, &self.ctx, self.synonyms).map_err(|e| SourceError {
                class: e.class().into(),
                message: e.to_string(),
            })?
        } else {
            match smart_wrap(url, &QueryBundle::for_term(term), &self.ctx) {
                WrapOutcome::Wrapped { table, .. } => table,
                WrapOutcome::Unsuitable { reason, error_class, .. } => {
                    return Err(SourceError {
                        class: error_class,
                        message: reason,
                    })
                }
            }
        };
        Ok(Materialized {
            table,
            consumed_binding: binding.is_some(),
        })
    }
}
