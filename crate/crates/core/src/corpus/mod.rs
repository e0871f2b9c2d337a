//! Literature corpus: ingestion, embedding and exhaustive cosine retrieval.

mod embed;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{
    cosine_similarity, embed_text, EmbedError, Embedder, EmbeddingVector, HashEmbedder,
    RemoteEmbedder, SimilarityError, DEFAULT_HASH_DIM,
};

const INDEX_FORMAT: &str = "sourcebridge-index";
const INDEX_VERSION: u32 = 1;

/// One literature record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(rename = "link")]
    pub access_link: String,
    pub year: i32,
}

impl Document {
    /// The text that gets embedded for this document.
    pub fn embedding_text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }

    fn validate(&self) -> Result<(), String> {
        for (field, value) in [
            ("id", &self.id),
            ("title", &self.title),
            ("abstract", &self.abstract_text),
            ("link", &self.access_link),
        ] {
            if value.trim().is_empty() {
                return Err(format!("missing or empty field `{field}`"));
            }
        }
        if !(1900..=2100).contains(&self.year) {
            return Err(format!("year {} outside [1900, 2100]", self.year));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding document {id}: {source}")]
    Embed {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error("index file: {0}")]
    Format(String),
    #[error("top_n requires n >= 1")]
    ZeroDepth,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// A corpus line that could not be ingested.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// Immutable, embedded corpus.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    embedder_id: String,
    dim: usize,
    documents: Vec<Document>,
    vectors: Vec<EmbeddingVector>,
    by_id: HashMap<String, usize>,
}

/// A retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub doc: &'a Document,
    pub score: f64,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

impl CorpusIndex {
    /// Embeds every document with `embedder`, using at most `workers` threads.
    pub fn build(
        documents: Vec<Document>,
        embedder: &dyn Embedder,
        workers: usize,
    ) -> Result<Self, IndexError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| IndexError::Format(e.to_string()))?;
        let vectors = pool.install(|| {
            documents
                .par_iter()
                .map(|d| {
                    embed_text(&d.embedding_text(), embedder).map_err(|source| IndexError::Embed {
                        id: d.id.clone(),
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        Self::from_parts(embedder.id(), documents, vectors)
    }

    pub fn from_parts(
        embedder_id: String,
        documents: Vec<Document>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self, IndexError> {
        if documents.len() != vectors.len() {
            return Err(IndexError::Format(format!(
                "{} documents but {} vectors",
                documents.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map(EmbeddingVector::dim).unwrap_or(0);
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(IndexError::Format(format!(
                "vector of dim {} in an index of dim {dim}",
                bad.dim()
            )));
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(IndexError::Format(format!("duplicate document id {}", d.id)));
            }
        }
        Ok(Self {
            embedder_id,
            dim,
            documents,
            vectors,
            by_id,
        })
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<(&Document, &EmbeddingVector)> {
        self.by_id
            .get(id)
            .map(|&i| (&self.documents[i], &self.vectors[i]))
    }

    /// Exhaustive top-n by cosine similarity; ties broken by ascending id.
    pub fn top_n(&self, query: &EmbeddingVector, n: usize) -> Result<Vec<Scored<'_>>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroDepth);
        }
        let mut hits = self
            .documents
            .iter()
            .zip(&self.vectors)
            .map(|(doc, v)| Ok(Scored { doc, score: cosine_similarity(query, v)? }))
            .collect::<Result<Vec<_>, SimilarityError>>()?;
        hits.sort_by(|a, b| rank_order(a.score, &a.doc.id, b.score, &b.doc.id));
        hits.truncate(n);
        Ok(hits)
    }

    /// Writes the index as line-delimited JSON behind a version header.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        let header = serde_json::json!({
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "embedder": self.embedder_id,
            "dim": self.dim,
            "count": self.documents.len(),
        });
        writeln!(out, "{header}").map_err(io)?;
        for (doc, vector) in self.documents.iter().zip(&self.vectors) {
            let line = serde_json::to_string(&IndexLine { doc: doc.clone(), vector: vector.clone() })
                .map_err(|e| IndexError::Format(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let io = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };
        let reader = BufReader::new(fs::File::open(path).map_err(io)?);
        let mut lines = reader.lines();
        let header: IndexHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line.map_err(io)?)
                .map_err(|e| IndexError::Format(format!("bad header: {e}")))?,
            None => return Err(IndexError::Format("empty index file".into())),
        };
        if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
            return Err(IndexError::Format(format!(
                "unsupported index {} v{}",
                header.format, header.version
            )));
        }
        let (mut documents, mut vectors) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexLine =
                serde_json::from_str(&line).map_err(|e| IndexError::Format(e.to_string()))?;
            documents.push(entry.doc);
            vectors.push(entry.vector);
        }
        if documents.len() != header.count {
            return Err(IndexError::Format(format!(
                "header announces {} entries, found {}",
                header.count,
                documents.len()
            )));
        }
        let index = Self::from_parts(header.embedder, documents, vectors)?;
        if index.len() > 0 && index.dim != header.dim {
            return Err(IndexError::Format("dimension does not match header".into()));
        }
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    embedder: String,
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    doc: Document,
    vector: EmbeddingVector,
}

/// Result of ingesting a corpus file.
#[derive(Debug)]
pub struct Ingested {
    pub index: CorpusIndex,
    pub rejections: Vec<Rejection>,
}

/// Parses corpus lines, rejecting malformed records individually.
pub fn parse_corpus(text: &str) -> (Vec<Document>, Vec<Rejection>) {
    let mut docs: Vec<Document> = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Document>(line)
            .map_err(|e| e.to_string())
            .and_then(|d| d.validate().map(|_| d));
        match parsed {
            Ok(doc) => {
                if let Some(first) = seen.get(&doc.id) {
                    rejections.push(Rejection {
                        line: line_no,
                        reason: format!("duplicate id {} (first on line {first})", doc.id),
                    });
                } else {
                    seen.insert(doc.id.clone(), line_no);
                    docs.push(doc);
                }
            }
            Err(reason) => rejections.push(Rejection { line: line_no, reason }),
        }
    }
    (docs, rejections)
}

/// Reads a line-delimited corpus file and embeds every valid record.
pub fn ingest_corpus(
    path: &Path,
    embedder: &dyn Embedder,
    workers: usize,
) -> Result<Ingested, IndexError> {
    let text = fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (docs, rejections) = parse_corpus(&text);
    for r in &rejections {
        tracing::warn!(line = r.line, reason = %r.reason, "rejected corpus record");
    }
    let index = CorpusIndex::build(docs, embedder, workers)?;
    Ok(Ingested { index, rejections })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str, abs: &str) -> Document {
        Document {
            id: id.into(),
            title: title.into(),
            abstract_text: abs.into(),
            access_link: format!("http://{id}.example.org/"),
            year: 2020,
        }
    }

    fn line(d: &Document) -> String {
        serde_json::to_string(d).unwrap()
    }

    #[test]
    fn parse_preserves_count_and_rejects_bad_records() {
        let good = [doc("a", "t1", "x"), doc("b", "t2", "y"), doc("c", "t3", "z")];
        let text = good.iter().map(line).collect::<Vec<_>>().join("\n");
        let (docs, rej) = parse_corpus(&text);
        assert_eq!(docs.len(), 3);
        assert!(rej.is_empty());

        let missing = r#"{"id":"d","title":"t","link":"http://d/","year":2001}"#;
        let (docs, rej) = parse_corpus(&format!("{text}\n{missing}"));
        assert_eq!(docs.len(), 3);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].line, 4);
        assert!(rej[0].reason.contains("abstract"), "{}", rej[0].reason);
    }

    #[test]
    fn year_and_duplicates_are_validated() {
        let mut old = doc("a", "t", "x");
        old.year = 1850;
        let dup = doc("b", "t", "x");
        let text = [line(&old), line(&dup), line(&dup)].join("\n");
        let (docs, rej) = parse_corpus(&text);
        assert_eq!(docs.len(), 1);
        assert_eq!(rej.len(), 2);
    }

    #[test]
    fn ingest_unreadable_file_is_fatal() {
        let err = ingest_corpus(Path::new("/nonexistent/corpus.jsonl"), &HashEmbedder::default(), 1);
        assert!(matches!(err, Err(IndexError::Io { .. })));
    }

    #[test]
    fn top_n_saturates_and_self_retrieves() {
        let e = HashEmbedder::new(256);
        let docs = vec![
            doc("d1", "histone variants", "h2a h2b chromatin"),
            doc("d2", "sperm motility", "male infertility phenotypes"),
            doc("d3", "protein database", "uniprot entries and names"),
        ];
        let index = CorpusIndex::build(docs.clone(), &e, 2).unwrap();
        let q = e.embed(&docs[1].embedding_text()).unwrap();
        let hits = index.top_n(&q, 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].doc.id, "d2");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(matches!(index.top_n(&q, 0), Err(IndexError::ZeroDepth)));
    }

    #[test]
    fn top_n_matches_brute_force_on_hand_vectors() {
        // five documents with hand-chosen 2-d vectors; cosines against [1, 0]
        // are 1.0, 0.6, 0.0, 0.6, -0.8
        let raw = [
            ("e", [2.0, 0.0]),
            ("b", [0.6, 0.8]),
            ("c", [0.0, 5.0]),
            ("a", [3.0, 4.0]),
            ("d", [-0.6, 0.8]),
        ];
        let docs: Vec<_> = raw.iter().map(|(id, _)| doc(id, "t", "x")).collect();
        let vectors = raw
            .iter()
            .map(|(_, v)| EmbeddingVector::new(v.to_vec()).unwrap())
            .collect();
        let index = CorpusIndex::from_parts("hand".into(), docs, vectors).unwrap();
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let got: Vec<_> = index.top_n(&q, 5).unwrap().iter().map(|h| h.doc.id.clone()).collect();
        // brute force: sort all (score, id) pairs
        let mut brute: Vec<(f64, &str)> = raw
            .iter()
            .map(|(id, v)| (v[0] / (v[0] * v[0] + v[1] * v[1]).sqrt(), *id))
            .collect();
        brute.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(y.1)));
        let brute: Vec<_> = brute.iter().map(|(_, id)| id.to_string()).collect();
        assert_eq!(got, brute);
        assert_eq!(got, ["e", "a", "b", "c", "d"]);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = CorpusIndex::build(vec![], &HashEmbedder::new(8), 1).unwrap();
        let q = EmbeddingVector::new(vec![1.0; 8]).unwrap();
        assert!(index.top_n(&q, 3).unwrap().is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let e = HashEmbedder::new(32);
        let docs = vec![doc("x1", "alpha", "beta gamma"), doc("x2", "delta", "epsilon")];
        let index = CorpusIndex::build(docs, &e, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        index.save(&path).unwrap();
        let back = CorpusIndex::load(&path).unwrap();
        assert_eq!(back.documents(), index.documents());
        assert_eq!(back.vectors, index.vectors);
        assert_eq!(back.embedder_id(), index.embedder_id());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn top_n_is_prefix_of_larger_n(
                texts in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,4}", 1..20),
                query in "[a-e]{1,3}( [a-e]{1,3}){0,3}",
                n in 1usize..20,
                extra in 0usize..10,
            ) {
                let e = HashEmbedder::new(16);
                let docs: Vec<_> = texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| doc(&format!("d{i:02}"), t, t))
                    .collect();
                let index = CorpusIndex::build(docs, &e, 1).unwrap();
                let q = e.embed(&query).unwrap();
                let short: Vec<_> = index.top_n(&q, n).unwrap().iter().map(|h| h.doc.id.clone()).collect();
                let long: Vec<_> = index.top_n(&q, n + extra).unwrap().iter().map(|h| h.doc.id.clone()).collect();
                prop_assert_eq!(short.len(), n.min(index.len()));
                prop_assert_eq!(&long[..short.len()], &short[..]);
            }
        }
    }
}
