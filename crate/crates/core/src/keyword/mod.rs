//! Combinatorial keyword search against a bibliographic backend.
//!
//! All keywords are tried as one conjunction first; on no result, every
//! combination one keyword shorter is tried in lexicographic position order,
//! and so on down to the minimum combination size. The first non-empty answer
//! wins.

mod eutils;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, Document};
use crate::text::tokenize;

pub use eutils::{EutilsBackend, DEFAULT_EUTILS_URL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeywordError {
    #[error("a keyword query needs at least one keyword")]
    EmptyConjunction,
    #[error("minimum combination size {min} is outside 1..={len}")]
    InvalidMinimum { min: usize, len: usize },
    #[error("keyword backend transport error: {0}")]
    Transport(String),
    #[error("keyword backend unavailable: all {0} queries failed")]
    BackendUnavailable(usize),
}

/// A bibliographic search service answering conjunctive keyword queries.
pub trait KeywordBackend: Send + Sync {
    /// Records matching every keyword; at most one result page.
    fn search(&self, keywords: &[String]) -> Result<Vec<Document>, KeywordError>;

    fn page_size(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Smallest combination size tried (L).
    pub min_size: usize,
    /// Maximum number of queries issued per search.
    pub budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { min_size: 2, budget: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryOutcome {
    Hits { count: usize },
    Empty,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedQuery {
    pub query: String,
    pub outcome: QueryOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordQueryResult {
    pub records: Vec<Document>,
    pub issued_query: String,
    pub combo_size: usize,
    pub page_size: usize,
}

/// Everything a search did, for the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub issued: Vec<IssuedQuery>,
    pub result: Option<KeywordQueryResult>,
    pub budget_exhausted: bool,
}

pub fn conjunction(keywords: &[&String]) -> String {
    keywords.iter().map(|k| k.as_str()).join(" AND ")
}

/// Runs the shrinking-conjunction search. `Ok` with `result: None` is the
/// null outcome; `Err(BackendUnavailable)` means every issued query failed in
/// transport.
pub fn combinatorial_search(
    keywords: &[String],
    backend: &dyn KeywordBackend,
    config: SearchConfig,
) -> Result<SearchTrace, KeywordError> {
    if keywords.is_empty() {
        return Err(KeywordError::EmptyConjunction);
    }
    if config.min_size == 0 || config.min_size > keywords.len() {
        return Err(KeywordError::InvalidMinimum {
            min: config.min_size,
            len: keywords.len(),
        });
    }
    let mut trace = SearchTrace {
        issued: Vec::new(),
        result: None,
        budget_exhausted: false,
    };
    for size in (config.min_size..=keywords.len()).rev() {
        for combo in keywords.iter().combinations(size) {
            if trace.issued.len() >= config.budget {
                trace.budget_exhausted = true;
                return Ok(trace);
            }
            let query = conjunction(&combo);
            let terms: Vec<String> = combo.into_iter().cloned().collect();
            match backend.search(&terms) {
                Ok(records) if !records.is_empty() => {
                    trace.issued.push(IssuedQuery {
                        query: query.clone(),
                        outcome: QueryOutcome::Hits { count: records.len() },
                    });
                    trace.result = Some(KeywordQueryResult {
                        records,
                        issued_query: query,
                        combo_size: size,
                        page_size: backend.page_size(),
                    });
                    return Ok(trace);
                }
                Ok(_) => trace.issued.push(IssuedQuery {
                    query,
                    outcome: QueryOutcome::Empty,
                }),
                Err(e) => {
                    tracing::warn!(%query, error = %e, "keyword query failed, skipping combination");
                    trace.issued.push(IssuedQuery {
                        query,
                        outcome: QueryOutcome::Failed { error: e.to_string() },
                    });
                }
            }
        }
    }
    let failed = trace
        .issued
        .iter()
        .filter(|q| matches!(q.outcome, QueryOutcome::Failed { .. }))
        .count();
    if failed > 0 && failed == trace.issued.len() {
        return Err(KeywordError::BackendUnavailable(failed));
    }
    Ok(trace)
}

/// In-process stand-in for a bibliographic API: a document matches when its
/// title and abstract contain every keyword on token boundaries.
#[derive(Debug, Clone)]
pub struct LocalBooleanBackend {
    docs: Vec<(Document, Vec<String>)>,
    page_size: usize,
}

impl LocalBooleanBackend {
    pub fn new(corpus: &CorpusIndex) -> Self {
        Self::from_documents(corpus.documents().to_vec())
    }

    pub fn from_documents(docs: Vec<Document>) -> Self {
        Self {
            docs: docs
                .into_iter()
                .map(|d| {
                    let tokens = tokenize(&d.embedding_text());
                    (d, tokens)
                })
                .collect(),
            page_size: 20,
        }
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size.max(1);
        self
    }
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

impl KeywordBackend for LocalBooleanBackend {
    fn search(&self, keywords: &[String]) -> Result<Vec<Document>, KeywordError> {
        if keywords.is_empty() {
            return Err(KeywordError::EmptyConjunction);
        }
        let phrases: Vec<Vec<String>> = keywords.iter().map(|k| tokenize(k)).collect();
        Ok(self
            .docs
            .iter()
            .filter(|(_, tokens)| phrases.iter().all(|p| contains_phrase(tokens, p)))
            .take(self.page_size)
            .map(|(d, _)| d.clone())
            .collect())
    }

    fn page_size(&self) -> usize {
        self.page_size
    }
}
