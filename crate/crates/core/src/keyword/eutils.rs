use std::collections::HashMap;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Deserialize;

use super::{KeywordBackend, KeywordError};
use crate::corpus::Document;

pub const DEFAULT_EUTILS_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";

/// Adapter for an NCBI E-utilities style search API (`esearch` + `esummary`).
///
/// Requests are spaced at least `min_spacing` apart; throttling responses
/// (HTTP 429) are retried with exponential backoff.
pub struct EutilsBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    page_size: usize,
    min_spacing: Duration,
    max_retries: u32,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct SearchEnvelope {
    esearchresult: SearchResult,
}

#[derive(Deserialize)]
struct SearchResult {
    #[serde(default)]
    idlist: Vec<String>,
}

#[derive(Deserialize)]
struct SummaryEnvelope {
    result: HashMap<String, serde_json::Value>,
}

impl EutilsBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, page_size: usize) -> Self {
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(20))
                .build()
                .expect("http client"),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            page_size: page_size.max(1),
            min_spacing: Duration::from_millis(350),
            max_retries: 4,
            last_request: Mutex::new(None),
        }
    }

    pub fn with_spacing(mut self, spacing: Duration) -> Self {
        self.min_spacing = spacing;
        self
    }

    fn pace(&self) {
        let mut last = self.last_request.lock();
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.min_spacing {
                std::thread::sleep(self.min_spacing - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn get(&self, endpoint: &str, params: &[(&str, String)]) -> Result<String, KeywordError> {
        let mut params = params.to_vec();
        params.push(("retmode", "json".into()));
        if let Some(key) = &self.api_key {
            params.push(("api_key", key.clone()));
        }
        let url = format!("{}/{endpoint}", self.base_url);
        let mut backoff = Duration::from_millis(500);
        for attempt in 0..=self.max_retries {
            self.pace();
            let resp = self
                .client
                .get(&url)
                .query(&params)
                .send()
                .map_err(|e| KeywordError::Transport(e.to_string()))?;
            let status = resp.status();
            if status.as_u16() == 429 && attempt < self.max_retries {
                std::thread::sleep(backoff);
                backoff *= 2;
                continue;
            }
            if !status.is_success() {
                return Err(KeywordError::Transport(format!("{endpoint}: status {status}")));
            }
            return resp.text().map_err(|e| KeywordError::Transport(e.to_string()));
        }
        Err(KeywordError::Transport(format!("{endpoint}: still throttled")))
    }
}

fn year_of(pubdate: &str) -> i32 {
    pubdate
        .get(..4)
        .and_then(|y| y.parse().ok())
        .filter(|y| (1900..=2100).contains(y))
        .unwrap_or(1900)
}

impl KeywordBackend for EutilsBackend {
    fn search(&self, keywords: &[String]) -> Result<Vec<Document>, KeywordError> {
        if keywords.is_empty() {
            return Err(KeywordError::EmptyConjunction);
        }
        let term = keywords.join(" AND ");
        let body = self.get(
            "esearch.fcgi",
            &[
                ("db", "pubmed".into()),
                ("term", term),
                ("retmax", self.page_size.to_string()),
            ],
        )?;
        let ids = serde_json::from_str::<SearchEnvelope>(&body)
            .map_err(|e| KeywordError::Transport(format!("esearch: {e}")))?
            .esearchresult
            .idlist;
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let body = self.get(
            "esummary.fcgi",
            &[("db", "pubmed".into()), ("id", ids.join(","))],
        )?;
        let summary = serde_json::from_str::<SummaryEnvelope>(&body)
            .map_err(|e| KeywordError::Transport(format!("esummary: {e}")))?;
        Ok(ids
            .iter()
            .filter_map(|id| {
                let rec = summary.result.get(id)?;
                let title = rec.get("title")?.as_str()?.trim().to_string();
                if title.is_empty() {
                    return None;
                }
                let pubdate = rec.get("pubdate").and_then(|p| p.as_str()).unwrap_or("");
                Some(Document {
                    id: format!("pmid:{id}"),
                    title,
                    abstract_text: String::new(),
                    access_link: format!("https://pubmed.ncbi.nlm.nih.gov/{id}/"),
                    year: year_of(pubdate),
                })
            })
            .collect())
    }

    fn page_size(&self) -> usize {
        self.page_size
    }
}
