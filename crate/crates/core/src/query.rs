//! Query processing: user request → retrieval query, expansions, keywords.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assistant::{ask, Assistant, AssistantCall, AssistantError, ContextDoc, Expansions, Reformulation};
use crate::corpus::{embed_text, CorpusIndex, Document, EmbedError, Embedder, IndexError};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no usable keywords (each must be at least 2 characters)")]
    NoKeywords,
    #[error("expansion count k must be at least 1")]
    InvalidK,
    #[error("index was embedded with `{index}` but the request uses `{request}`")]
    MixedBackends { index: String, request: String },
    #[error(transparent)]
    Assistant(#[from] AssistantError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryConfig {
    /// Number of expanded queries.
    pub k: usize,
    /// Contexts retrieved for expansion.
    pub contexts: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { k: 5, contexts: 4 }
    }
}

/// Bundle metadata: what the processor added on its own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    /// Expansions generated by the padding rule rather than the assistant.
    pub padded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub original: String,
    pub retrieval_query: String,
    pub expanded: Vec<String>,
    pub keywords: Vec<String>,
    /// Ids of the documents used as expansion context.
    pub contexts: Vec<String>,
    #[serde(default)]
    pub metadata: BundleMetadata,
}

impl QueryBundle {
    /// A bundle with no expansion, used when a query term is already known.
    pub fn for_term(term: &str) -> Self {
        Self {
            original: term.to_string(),
            retrieval_query: term.to_string(),
            expanded: vec![term.to_string()],
            keywords: normalize_keywords(&tokenize(term)),
            contexts: Vec::new(),
            metadata: BundleMetadata::default(),
        }
    }
}

/// Lowercase, trim, drop tokens shorter than 2 characters, dedup in order.
pub fn normalize_keywords(raw: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for k in raw {
        let k = k.trim().to_lowercase();
        if k.chars().count() >= 2 && !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn reformulate(query: &str, knowledge: Option<&str>, assistant: &dyn Assistant) -> Result<Reformulation, QueryError> {
    if query.trim().is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    let call = AssistantCall::Reformulate {
        query: query.to_string(),
        knowledge: knowledge.map(str::to_string),
    };
    Ok(ask(assistant, &call, |r: &Reformulation| {
        if r.retrieval_query.trim().is_empty() {
            Err("retrieval_query must not be empty".into())
        } else {
            Ok(())
        }
    })?)
}

/// Keywords for bibliographic search, normalized.
pub fn extract_keywords(query: &str, assistant: &dyn Assistant) -> Result<Vec<String>, QueryError> {
    let r = reformulate(query, None, assistant)?;
    let keywords = normalize_keywords(&r.keywords);
    if keywords.is_empty() {
        return Err(QueryError::NoKeywords);
    }
    Ok(keywords)
}

/// Exactly `k` distinct expansions. When the assistant returns fewer, the
/// rest are built by appending unseen title terms of each context in turn,
/// then by numbered variants. Returns the expansions and the padded count.
pub fn expand_queries(
    retrieval_query: &str,
    contexts: &[&Document],
    assistant: &dyn Assistant,
    k: usize,
) -> Result<(Vec<String>, usize), QueryError> {
    if k == 0 {
        return Err(QueryError::InvalidK);
    }
    let call = AssistantCall::Expand {
        retrieval_query: retrieval_query.to_string(),
        contexts: contexts.iter().map(|d| ContextDoc::from(*d)).collect(),
        k,
    };
    let got: Expansions = ask(assistant, &call, |_| Ok(()))?;
    let mut out: Vec<String> = Vec::with_capacity(k);
    let push = |out: &mut Vec<String>, q: String| {
        let q = q.trim().to_string();
        if !q.is_empty() && out.len() < k && !out.iter().any(|o| o.eq_ignore_ascii_case(&q)) {
            out.push(q);
        }
    };
    for q in got.queries {
        push(&mut out, q);
    }
    let from_assistant = out.len();
    let base_terms = tokenize(retrieval_query);
    for doc in contexts {
        if out.len() >= k {
            break;
        }
        let terms: Vec<String> = tokenize(&doc.title)
            .into_iter()
            .filter(|t| t.len() >= 3 && !base_terms.contains(t))
            .take(3)
            .collect();
        if !terms.is_empty() {
            push(&mut out, format!("{retrieval_query} {}", terms.join(" ")));
        }
    }
    let mut n = 2;
    while out.len() < k {
        push(&mut out, format!("{retrieval_query} (variant {n})"));
        n += 1;
    }
    Ok((out, k - from_assistant.min(k)))
}

fn check_backend(index: &CorpusIndex, embedder: &dyn Embedder) -> Result<(), QueryError> {
    if !index.is_empty() && index.embedder_id() != embedder.id() {
        return Err(QueryError::MixedBackends {
            index: index.embedder_id().to_string(),
            request: embedder.id(),
        });
    }
    Ok(())
}

/// Reformulates, retrieves expansion contexts from the index, expands, and
/// normalizes keywords.
pub fn process_query(
    query: &str,
    knowledge: Option<&str>,
    assistant: &dyn Assistant,
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    config: QueryConfig,
) -> Result<QueryBundle, QueryError> {
    check_backend(index, embedder)?;
    let r = reformulate(query, knowledge, assistant)?;
    let keywords = normalize_keywords(&r.keywords);
    if keywords.is_empty() {
        return Err(QueryError::NoKeywords);
    }
    let retrieval_query = r.retrieval_query.trim().to_string();
    let query_vec = embed_text(&retrieval_query, embedder)?;
    let contexts: Vec<&Document> = index
        .top_n(&query_vec, config.contexts.max(1))?
        .into_iter()
        .map(|h| h.doc)
        .collect();
    let (expanded, padded) = expand_queries(&retrieval_query, &contexts, assistant, config.k)?;
    Ok(QueryBundle {
        original: query.to_string(),
        retrieval_query,
        expanded,
        keywords,
        contexts: contexts.iter().map(|d| d.id.clone()).collect(),
        metadata: BundleMetadata {
            padded,
            knowledge: knowledge.map(str::to_string),
        },
    })
}
