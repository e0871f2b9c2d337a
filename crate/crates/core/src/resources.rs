//! Candidate ranking and data-source identification.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assistant::{ask, Assistant, AssistantCall, AssistantError, ContextDoc, IdentifiedResources};
use crate::corpus::{
    cosine_similarity, embed_text, rank_order, CorpusIndex, Document, EmbedError, Embedder,
    IndexError, SimilarityError,
};
use crate::keyword::{combinatorial_search, KeywordBackend, SearchConfig, SearchTrace};
use crate::query::QueryBundle;
use crate::text::{link_key, parse_loose_url};

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("no candidate documents: retrieval found nothing and keyword search was null")]
    NoCandidates,
    #[error("index was embedded with `{index}` but the request uses `{request}`")]
    MixedBackends { index: String, request: String },
    #[error(transparent)]
    Assistant(#[from] AssistantError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// One identified data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceDescriptor {
    pub retrieval_query: String,
    pub source_name: String,
    pub data_link: String,
    pub paper_title: String,
    #[serde(default)]
    pub origin_doc: Option<String>,
    #[serde(default)]
    pub rank_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc: Document,
    /// Cosine similarity to the retrieval query.
    pub score: f64,
    /// Found only through keyword search (not in the corpus).
    pub external: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankConfig {
    /// Documents retrieved per expanded query.
    pub per_query: usize,
    /// Length of the final ranked prefix.
    pub cut: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { per_query: 4, cut: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub ranked: Vec<RankedDoc>,
    /// Size of the deduplicated union before the cut.
    pub merged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_trace: Option<SearchTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_error: Option<String>,
}

/// Union of per-expansion top-n results and keyword hits, deduplicated by
/// id (first occurrence kept), re-scored against the retrieval query.
pub fn merge_and_rank(
    retrieval_query: &str,
    expanded: &[String],
    keyword_docs: &[Document],
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    config: RankConfig,
) -> Result<(Vec<RankedDoc>, usize), ResourceError> {
    if !index.is_empty() && index.embedder_id() != embedder.id() {
        return Err(ResourceError::MixedBackends {
            index: index.embedder_id().to_string(),
            request: embedder.id(),
        });
    }
    let mut seen = HashSet::new();
    let mut merged: Vec<Document> = Vec::new();
    for q in expanded {
        let v = embed_text(q, embedder)?;
        for hit in index.top_n(&v, config.per_query.max(1))? {
            if seen.insert(hit.doc.id.clone()) {
                merged.push(hit.doc.clone());
            }
        }
    }
    for d in keyword_docs {
        if seen.insert(d.id.clone()) {
            merged.push(d.clone());
        }
    }
    let total = merged.len();
    let target = embed_text(retrieval_query, embedder)?;
    let mut ranked = Vec::with_capacity(merged.len());
    for doc in merged {
        let (vector, external) = match index.get(&doc.id) {
            Some((_, v)) => (v.clone(), false),
            None => match embed_text(&doc.embedding_text(), embedder) {
                Ok(v) => (v, true),
                Err(EmbedError::EmptyText) => continue,
                Err(e) => return Err(e.into()),
            },
        };
        let score = cosine_similarity(&target, &vector)?;
        ranked.push(RankedDoc { doc, score, external });
    }
    ranked.sort_by(|a, b| rank_order(a.score, &a.doc.id, b.score, &b.doc.id));
    ranked.truncate(config.cut.max(1));
    Ok((ranked, total))
}

/// Runs keyword search for the bundle, then [`merge_and_rank`].
pub fn rank_candidates(
    bundle: &QueryBundle,
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    keywords: &dyn KeywordBackend,
    search: SearchConfig,
    config: RankConfig,
) -> Result<Ranking, ResourceError> {
    let (trace, keyword_error) = if bundle.keywords.is_empty() {
        (None, None)
    } else {
        let cfg = SearchConfig {
            min_size: search.min_size.clamp(1, bundle.keywords.len()),
            ..search
        };
        match combinatorial_search(&bundle.keywords, keywords, cfg) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let keyword_docs = trace
        .as_ref()
        .and_then(|t| t.result.as_ref())
        .map(|r| r.records.clone())
        .unwrap_or_default();
    let (ranked, merged) = merge_and_rank(
        &bundle.retrieval_query,
        &bundle.expanded,
        &keyword_docs,
        index,
        embedder,
        config,
    )?;
    if ranked.is_empty() {
        return Err(ResourceError::NoCandidates);
    }
    Ok(Ranking {
        ranked,
        merged,
        keyword_trace: trace,
        keyword_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub resources: Vec<ResourceDescriptor>,
    pub warnings: Vec<String>,
}

/// Asks the assistant which data sources the ranked papers describe, then
/// drops descriptors with unusable links and duplicate sources.
pub fn identify_resources(
    query: &str,
    retrieval_query: &str,
    knowledge: Option<&str>,
    ranked: &[RankedDoc],
    assistant: &dyn Assistant,
) -> Result<Identification, ResourceError> {
    if ranked.is_empty() {
        return Err(ResourceError::NoCandidates);
    }
    let call = AssistantCall::IdentifyResources {
        query: query.to_string(),
        retrieval_query: retrieval_query.to_string(),
        knowledge: knowledge.map(str::to_string),
        candidates: ranked.iter().map(|r| ContextDoc::from(&r.doc)).collect(),
    };
    let raw: IdentifiedResources = ask(assistant, &call, |_| Ok(()))?;
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut resources = Vec::new();
    for r in raw.resources {
        if r.source_name.trim().is_empty() {
            warnings.push(format!("dropped descriptor without a source name ({})", r.data_link));
            continue;
        }
        if parse_loose_url(&r.data_link).is_none() {
            tracing::warn!(link = %r.data_link, source = %r.source_name, "dropping descriptor with malformed URL");
            warnings.push(format!("dropped `{}`: malformed data link `{}`", r.source_name, r.data_link));
            continue;
        }
        if !seen.insert(link_key(&r.data_link)) {
            continue;
        }
        let origin = r.origin_doc.filter(|id| {
            let known = ranked.iter().any(|d| &d.doc.id == id);
            if !known {
                warnings.push(format!("`{}` cites unknown document {id}", r.source_name));
            }
            known
        });
        let rank_score = origin
            .as_ref()
            .and_then(|id| ranked.iter().find(|d| &d.doc.id == id))
            .map(|d| d.score)
            .unwrap_or(0.0);
        resources.push(ResourceDescriptor {
            retrieval_query: r.retrieval_query.trim().to_string(),
            source_name: r.source_name.trim().to_string(),
            data_link: r.data_link.trim().to_string(),
            paper_title: r.paper_title,
            origin_doc: origin,
            rank_score,
        });
    }
    Ok(Identification { resources, warnings })
}
