//! Retrieval metrics over run files.
//!
//! A run holds, per query, the document it was written for and the ranked
//! list the system returned. Ranks count from 1; a document below the cutoff
//! `k` or absent from the list contributes 0.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{embed_text, CorpusIndex, Embedder};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error("run has no queries")]
    EmptyRun,
    #[error("query `{0}` ranks a document twice")]
    DuplicateRanked(String),
    #[error("document `{0}` has no queries in the run")]
    NoQueries(String),
    #[error("findability bias is undefined when every value is zero")]
    AllZero,
    #[error("findability bias needs at least one value")]
    NoValues,
    #[error("applicable indicator count must be at least 1")]
    NoApplicable,
    #[error("{satisfied} satisfied exceeds {applicable} applicable")]
    TooManySatisfied { satisfied: u32, applicable: u32 },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("query `{query}`: relevant document `{doc}` is not in the corpus")]
    UnknownDocument { query: String, doc: String },
    #[error("query `{0}`: {1}")]
    Embed(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub relevant_doc_id: String,
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub records: Vec<RunRecord>,
    pub k: usize,
}

impl RetrievalRun {
    pub fn new(records: Vec<RunRecord>, k: usize) -> Result<Self, EvalError> {
        if k == 0 {
            return Err(EvalError::ZeroCutoff);
        }
        for r in &records {
            let mut seen = HashSet::new();
            if !r.ranked.iter().all(|id| seen.insert(id)) {
                return Err(EvalError::DuplicateRanked(r.query_id.clone()));
            }
        }
        Ok(Self { records, k })
    }

    /// Rank of the relevant document, when within the cutoff.
    fn rank(&self, r: &RunRecord) -> Option<usize> {
        r.ranked
            .iter()
            .take(self.k)
            .position(|id| *id == r.relevant_doc_id)
            .map(|p| p + 1)
    }

    fn reciprocal(&self, r: &RunRecord) -> f64 {
        self.rank(r).map_or(0.0, |rank| 1.0 / rank as f64)
    }

    /// Relevant documents in first-seen order.
    pub fn documents(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .map(|r| r.relevant_doc_id.as_str())
            .filter(|d| seen.insert(*d))
            .collect()
    }

    /// Every relevant document must be in the corpus.
    pub fn check_corpus(&self, index: &CorpusIndex) -> Result<(), EvalError> {
        match self.records.iter().find(|r| index.get(&r.relevant_doc_id).is_none()) {
            Some(r) => Err(EvalError::UnknownDocument {
                query: r.query_id.clone(),
                doc: r.relevant_doc_id.clone(),
            }),
            None => Ok(()),
        }
    }
}

/// Mean reciprocal rank of `doc` over its own queries.
pub fn findability(run: &RetrievalRun, doc: &str) -> Result<f64, EvalError> {
    let own: Vec<&RunRecord> = run.records.iter().filter(|r| r.relevant_doc_id == doc).collect();
    if own.is_empty() {
        return Err(EvalError::NoQueries(doc.to_string()));
    }
    Ok(own.iter().map(|r| run.reciprocal(r)).sum::<f64>() / own.len() as f64)
}

pub fn per_doc_findability(run: &RetrievalRun) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &run.records {
        let e = sums.entry(r.relevant_doc_id.clone()).or_default();
        e.0 += run.reciprocal(r);
        e.1 += 1;
    }
    sums.into_iter().map(|(d, (s, m))| (d, s / m as f64)).collect()
}

pub fn mean_findability(run: &RetrievalRun) -> Result<f64, EvalError> {
    let per_doc = per_doc_findability(run);
    if per_doc.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    Ok(per_doc.values().sum::<f64>() / per_doc.len() as f64)
}

/// Gini coefficient of the values, sorted ascending.
pub fn findability_bias(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::NoValues);
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(EvalError::AllZero);
    }
    if values.iter().all(|v| *v == values[0]) {
        // the weighted sum cancels exactly in real arithmetic
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, f)| (2.0 * (i + 1) as f64 - n - 1.0) * f)
        .sum();
    Ok(weighted / (n * total))
}

/// Fraction of queries whose relevant document is in the top `k`.
pub fn hit_rate(run: &RetrievalRun) -> Result<f64, EvalError> {
    if run.records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let hits = run.records.iter().filter(|r| run.rank(r).is_some()).count();
    Ok(hits as f64 / run.records.len() as f64)
}

pub fn mrr(run: &RetrievalRun) -> Result<f64, EvalError> {
    if run.records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    Ok(run.records.iter().map(|r| run.reciprocal(r)).sum::<f64>() / run.records.len() as f64)
}

/// Percentage of applicable maturity indicators satisfied.
pub fn fair_success_rate(satisfied: u32, applicable: u32) -> Result<f64, EvalError> {
    if applicable == 0 {
        return Err(EvalError::NoApplicable);
    }
    if satisfied > applicable {
        return Err(EvalError::TooManySatisfied { satisfied, applicable });
    }
    Ok(100.0 * satisfied as f64 / applicable as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub documents: usize,
    pub k: usize,
    pub per_doc_findability: BTreeMap<String, f64>,
    pub mean_findability: f64,
    /// Absent when every document has findability 0.
    pub findability_bias: Option<f64>,
    pub hit_rate: f64,
    pub mrr: f64,
}

impl MetricsReport {
    pub fn compute(run: &RetrievalRun) -> Result<Self, EvalError> {
        if run.records.is_empty() {
            return Err(EvalError::EmptyRun);
        }
        let per_doc = per_doc_findability(run);
        let values: Vec<f64> = per_doc.values().copied().collect();
        let bias = match findability_bias(&values) {
            Ok(b) => Some(b),
            Err(EvalError::AllZero) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            queries: run.records.len(),
            documents: per_doc.len(),
            k: run.k,
            mean_findability: mean_findability(run)?,
            findability_bias: bias,
            hit_rate: hit_rate(run)?,
            mrr: mrr(run)?,
            per_doc_findability: per_doc,
        })
    }

    /// One-row summary table with the headline metrics.
    pub fn to_table(&self, label: &str) -> String {
        let bias = self.findability_bias.map_or("n/a".to_string(), |b| format!("{b:.3}"));
        let headers = ["Run", "Mean Findability", "Findability Bias", "Hit Rate", "MRR"];
        let values = [
            label.to_string(),
            format!("{:.3}", self.mean_findability),
            bias,
            format!("{:.3}", self.hit_rate),
            format!("{:.3}", self.mrr),
        ];
        let widths: Vec<usize> = headers.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
        let mut out = String::new();
        let line = |cells: &[String]| -> String {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("| {} |\n", padded.join(" | "))
        };
        out.push_str(&line(&headers.map(String::from)));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = write!(out, "|-{}-|\n", rule.join("-|-"));
        out.push_str(&line(&values));
        out
    }
}

/// Reads a run file: one JSON object per line with `query_id`,
/// `relevant_doc_id` and `ranked`. Blank lines are skipped.
pub fn parse_run_file(text: &str, k: usize) -> Result<RetrievalRun, EvalError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RunRecord = serde_json::from_str(line).map_err(|e| EvalError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    RetrievalRun::new(records, k)
}

pub fn write_run_file(run: &RetrievalRun) -> String {
    run.records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// An evaluation query written for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub relevant_doc_id: String,
    pub query: String,
}

pub fn parse_query_file(text: &str) -> Result<Vec<EvalQuery>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Format {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Ranks the corpus for every query (to `depth` documents) and records the
/// result as a run with cutoff `k`.
pub fn build_run(
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    queries: &[EvalQuery],
    depth: usize,
    k: usize,
) -> Result<RetrievalRun, EvalError> {
    let mut records = Vec::with_capacity(queries.len());
    for q in queries {
        if index.get(&q.relevant_doc_id).is_none() {
            return Err(EvalError::UnknownDocument {
                query: q.query_id.clone(),
                doc: q.relevant_doc_id.clone(),
            });
        }
        let v = embed_text(&q.query, embedder).map_err(|e| EvalError::Embed(q.query_id.clone(), e.to_string()))?;
        let ranked = index
            .top_n(&v, depth.max(k))
            .map_err(|e| EvalError::Embed(q.query_id.clone(), e.to_string()))?
            .into_iter()
            .map(|s| s.doc.id.clone())
            .collect();
        records.push(RunRecord {
            query_id: q.query_id.clone(),
            relevant_doc_id: q.relevant_doc_id.clone(),
            ranked,
        });
    }
    RetrievalRun::new(records, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, rel: &str, ranked: &[&str]) -> RunRecord {
        RunRecord {
            query_id: q.into(),
            relevant_doc_id: rel.into(),
            ranked: ranked.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn findability_examples() {
        let run = RetrievalRun::new(
            vec![
                rec("q1", "d", &["d", "x", "y", "z"]),
                rec("q2", "d", &["x", "d", "y", "z"]),
                rec("q3", "d", &["x", "y", "z", "d"]),
                rec("q4", "d", &["x", "y", "z", "w"]),
            ],
            4,
        )
        .unwrap();
        assert_eq!(findability(&run, "d").unwrap(), 0.4375);
        assert_eq!(findability(&run, "nope"), Err(EvalError::NoQueries("nope".into())));
        let top = RetrievalRun::new((0..4).map(|i| rec(&format!("q{i}"), "d", &["d"])).collect(), 4).unwrap();
        assert_eq!(findability(&top, "d").unwrap(), 1.0);
        let never = RetrievalRun::new(vec![rec("q", "d", &["x"])], 4).unwrap();
        assert_eq!(findability(&never, "d").unwrap(), 0.0);
    }

    #[test]
    fn cutoff_applies() {
        let run = RetrievalRun::new(vec![rec("q", "d", &["a", "b", "d"])], 2).unwrap();
        assert_eq!(hit_rate(&run).unwrap(), 0.0);
        assert_eq!(mrr(&run).unwrap(), 0.0);
        assert_eq!(findability(&run, "d").unwrap(), 0.0);
    }

    #[test]
    fn mean_and_bias() {
        let run = RetrievalRun::new(vec![rec("q1", "a", &["a"]), rec("q2", "b", &["x", "b"])], 4).unwrap();
        assert_eq!(mean_findability(&run).unwrap(), 0.75);
        assert_eq!(findability_bias(&[0.3; 4]).unwrap(), 0.0);
        assert_eq!(findability_bias(&[0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(findability_bias(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(findability_bias(&[0.0, 0.0]), Err(EvalError::AllZero));
        assert_eq!(findability_bias(&[]), Err(EvalError::NoValues));
    }

    #[test]
    fn hit_rate_and_mrr() {
        let run = RetrievalRun::new(
            vec![
                rec("q1", "a", &["a"]),
                rec("q2", "b", &["x", "b"]),
                rec("q3", "c", &["x", "y", "z", "c"]),
                rec("q4", "d", &["x"]),
            ],
            4,
        )
        .unwrap();
        assert_eq!(hit_rate(&run).unwrap(), 0.75);
        let three = RetrievalRun::new(run.records[..3].to_vec(), 4).unwrap();
        assert!((mrr(&three).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        let none = RetrievalRun::new(vec![rec("q", "a", &["b"])], 4).unwrap();
        assert_eq!(mrr(&none).unwrap(), 0.0);
    }

    #[test]
    fn success_rate() {
        assert_eq!(fair_success_rate(3, 20).unwrap(), 15.0);
        assert_eq!(fair_success_rate(7, 20).unwrap(), 35.0);
        assert_eq!(fair_success_rate(9, 20).unwrap(), 45.0);
        assert_eq!(fair_success_rate(20, 20).unwrap(), 100.0);
        assert_eq!(fair_success_rate(1, 0), Err(EvalError::NoApplicable));
        assert!(fair_success_rate(21, 20).is_err());
    }

    #[test]
    fn validation_and_files() {
        assert_eq!(RetrievalRun::new(vec![], 0), Err(EvalError::ZeroCutoff));
        assert_eq!(
            RetrievalRun::new(vec![rec("q", "a", &["a", "a"])], 4),
            Err(EvalError::DuplicateRanked("q".into()))
        );
        let run = RetrievalRun::new(vec![rec("q1", "a", &["a", "b"]), rec("q2", "b", &["a"])], 4).unwrap();
        let text = write_run_file(&run);
        assert_eq!(parse_run_file(&format!("\n{text}\n"), 4).unwrap(), run);
        assert!(matches!(parse_run_file("{\"query_id\":1}", 4), Err(EvalError::Format { line: 1, .. })));
        assert_eq!(parse_run_file("", 4), Err(EvalError::EmptyRun));
    }

    #[test]
    fn report_table() {
        let run = RetrievalRun::new(vec![rec("q1", "a", &["a"]), rec("q2", "b", &["x"])], 4).unwrap();
        let report = MetricsReport::compute(&run).unwrap();
        assert_eq!(report.findability_bias, Some(0.5));
        let table = report.to_table("fixture");
        assert!(table.contains("Mean Findability") && table.contains("0.500"));
        assert_eq!(table.lines().count(), 3);
        let zero = RetrievalRun::new(vec![rec("q", "a", &["x"])], 4).unwrap();
        assert_eq!(MetricsReport::compute(&zero).unwrap().findability_bias, None);
    }
}
