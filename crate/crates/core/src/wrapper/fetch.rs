use std::collections::HashMap;
use std::io::Read;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use super::FormMethod;

/// Fetch failures, classified the way end-to-end source failures are
/// reported.
#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FetchError {
    #[error("{url}: not found (404)")]
    NotFound { url: String },
    #[error("{url}: bad gateway (502)")]
    BadGateway { url: String },
    #[error("{url}: timed out")]
    Timeout { url: String },
    #[error("{url}: HTTP status {status}")]
    HttpStatus { url: String, status: u16 },
    #[error("{url}: {detail}")]
    Transport { url: String, detail: String },
    #[error("{url}: body exceeds {limit} bytes")]
    TooLarge { url: String, limit: usize },
    #[error("{url}: more than {limit} redirects")]
    TooManyRedirects { url: String, limit: usize },
    #[error("invalid URL `{url}`")]
    InvalidUrl { url: String },
}

impl FetchError {
    pub fn class(&self) -> &'static str {
        match self {
            FetchError::NotFound { .. } => "not_found",
            FetchError::BadGateway { .. } => "bad_gateway",
            FetchError::Timeout { .. } => "timeout",
            FetchError::HttpStatus { .. } => "http_status",
            FetchError::Transport { .. } => "transport",
            FetchError::TooLarge { .. } => "too_large",
            FetchError::TooManyRedirects { .. } => "too_many_redirects",
            FetchError::InvalidUrl { .. } => "invalid_url",
        }
    }

    pub(crate) fn from_status(url: &Url, status: u16) -> FetchError {
        let url = url.to_string();
        match status {
            404 | 410 => FetchError::NotFound { url },
            502 => FetchError::BadGateway { url },
            504 => FetchError::Timeout { url },
            _ => FetchError::HttpStatus { url, status },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchRequest {
    pub method: FormMethod,
    pub url: Url,
    /// `application/x-www-form-urlencoded` body for POST.
    pub body: Option<String>,
}

impl FetchRequest {
    pub fn get(url: Url) -> Self {
        Self {
            method: FormMethod::Get,
            url,
            body: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchResponse {
    /// URL after redirects.
    pub final_url: Url,
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl FetchResponse {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    /// Media type without parameters, lowercased.
    pub fn media_type(&self) -> Option<String> {
        self.content_type
            .as_deref()
            .map(|c| c.split(';').next().unwrap_or("").trim().to_lowercase())
    }

    pub fn is_html(&self) -> bool {
        match self.media_type() {
            Some(m) => m == "text/html" || m == "application/xhtml+xml",
            None => {
                let head = String::from_utf8_lossy(&self.body[..self.body.len().min(512)]).to_lowercase();
                head.contains("<html") || head.contains("<!doctype html")
            }
        }
    }
}

/// The only path to the network. Every non-2xx final status is an error.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, FetchError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchConfig {
    pub timeout: Duration,
    pub max_redirects: usize,
    pub max_body: usize,
    /// Minimum spacing between requests to one host.
    pub politeness: Duration,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(20),
            max_redirects: 5,
            max_body: 32 * 1024 * 1024,
            politeness: Duration::from_millis(500),
        }
    }
}

/// HTTP fetcher. Redirects are followed by hand so that host rewrites apply
/// to every hop.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
    config: FetchConfig,
    /// host → replacement origin (`http://127.0.0.1:8080`).
    rewrites: HashMap<String, Url>,
    last_by_host: Mutex<HashMap<String, Instant>>,
}

impl HttpFetcher {
    pub fn new(config: FetchConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .redirect(reqwest::redirect::Policy::none())
            .user_agent(concat!("sourcebridge/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client");
        Self {
            client,
            config,
            rewrites: HashMap::new(),
            last_by_host: Mutex::new(HashMap::new()),
        }
    }

    /// Sends requests for `host` (with or without `www.`) to `origin`.
    pub fn with_rewrite(mut self, host: &str, origin: Url) -> Self {
        let h = host.to_lowercase();
        self.rewrites.insert(h.strip_prefix("www.").unwrap_or(&h).to_string(), origin);
        self
    }

    fn target(&self, url: &Url) -> Url {
        let Some(host) = url.host_str() else {
            return url.clone();
        };
        let h = host.to_lowercase();
        match self.rewrites.get(h.strip_prefix("www.").unwrap_or(&h)) {
            Some(origin) => {
                let mut t = origin.clone();
                t.set_path(url.path());
                t.set_query(url.query());
                t
            }
            None => url.clone(),
        }
    }

    fn pace(&self, host: &str) {
        let wait = {
            let mut last = self.last_by_host.lock();
            let now = Instant::now();
            let next = last
                .get(host)
                .map(|t| *t + self.config.politeness)
                .filter(|n| *n > now)
                .unwrap_or(now);
            last.insert(host.to_string(), next);
            next - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn send_once(&self, method: FormMethod, logical: &Url, body: Option<&str>) -> Result<reqwest::blocking::Response, FetchError> {
        let actual = self.target(logical);
        self.pace(logical.host_str().unwrap_or(""));
        let req = match method {
            FormMethod::Get => self.client.get(actual.as_str()),
            FormMethod::Post => self
                .client
                .post(actual.as_str())
                .header("content-type", "application/x-www-form-urlencoded")
                .body(body.unwrap_or("").to_string()),
        };
        req.send().map_err(|e| {
            if e.is_timeout() {
                FetchError::Timeout { url: logical.to_string() }
            } else {
                FetchError::Transport {
                    url: logical.to_string(),
                    detail: e.to_string(),
                }
            }
        })
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, FetchError> {
        let mut url = request.url.clone();
        let mut method = request.method;
        let mut body = request.body.clone();
        for _ in 0..=self.config.max_redirects {
            let resp = self.send_once(method, &url, body.as_deref())?;
            let status = resp.status();
            if status.is_redirection() {
                let location = resp
                    .headers()
                    .get("location")
                    .and_then(|l| l.to_str().ok())
                    .ok_or_else(|| FetchError::HttpStatus {
                        url: url.to_string(),
                        status: status.as_u16(),
                    })?;
                url = url.join(location).map_err(|_| FetchError::InvalidUrl {
                    url: location.to_string(),
                })?;
                if status.as_u16() != 307 && status.as_u16() != 308 {
                    method = FormMethod::Get;
                    body = None;
                }
                continue;
            }
            if !status.is_success() {
                return Err(FetchError::from_status(&url, status.as_u16()));
            }
            let content_type = resp
                .headers()
                .get("content-type")
                .and_then(|c| c.to_str().ok())
                .map(str::to_string);
            let limit = self.config.max_body;
            let mut buf = Vec::new();
            resp.take(limit as u64 + 1)
                .read_to_end(&mut buf)
                .map_err(|e| FetchError::Transport {
                    url: url.to_string(),
                    detail: e.to_string(),
                })?;
            if buf.len() > limit {
                return Err(FetchError::TooLarge { url: url.to_string(), limit });
            }
            return Ok(FetchResponse {
                final_url: url,
                status: status.as_u16(),
                content_type,
                body: buf,
            });
        }
        Err(FetchError::TooManyRedirects {
            url: request.url.to_string(),
            limit: self.config.max_redirects,
        })
    }
}
