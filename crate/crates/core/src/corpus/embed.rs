use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

/// Default width of the feature-hash embedder.
pub const DEFAULT_HASH_DIM: usize = 1024;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend transport error (retryable): {0}")]
    Transport(String),
    #[error("embedding backend returned an unusable response: {0}")]
    BadResponse(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
}

/// A dense embedding. Every component is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Returns `None` when the input is empty or holds a non-finite value.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            None
        } else {
            Some(Self(values))
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// An embedding backend. Implementations must be shareable across threads.
pub trait Embedder: Send + Sync {
    /// Identifies the vector space; scores from different ids are not comparable.
    fn id(&self) -> String;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Rejects blank text, then delegates to the backend.
pub fn embed_text(text: &str, backend: &dyn Embedder) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    backend.embed(text)
}

/// Deterministic bag-of-tokens embedder: each token is hashed with 64-bit
/// FNV-1a into one of `dim` buckets, bucket counts are L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-fnv1a-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut counts = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let bucket = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            // only separators: nothing to hash
            return Err(EmbedError::EmptyText);
        }
        counts.iter_mut().for_each(|c| *c /= norm);
        Ok(EmbeddingVector(counts))
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    max_attempts: u32,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            max_attempts: 3,
        }
    }

    fn attempt(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(EmbedError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(EmbedError::BadResponse(format!("status {status}")));
        }
        let body: EmbeddingResponse = resp
            .json()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        let first = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::BadResponse("empty data array".into()))?;
        EmbeddingVector::new(first.embedding)
            .ok_or_else(|| EmbedError::BadResponse("empty or non-finite vector".into()))
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut delay = Duration::from_millis(250);
        let mut last = None;
        for _ in 0..self.max_attempts {
            match self.attempt(text) {
                Err(e) if e.is_retryable() => {
                    last = Some(e);
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
        Err(last.unwrap_or_else(|| EmbedError::Transport("no attempt made".into())))
    }
}
