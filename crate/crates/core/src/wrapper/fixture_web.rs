//! Authored fixture sites served without a network.
//!
//! A site is a directory holding `site.json` and the files it names:
//!
//! ```json
//! {
//!   "base_url": "http://mik.bicnirrh.res.in/",
//!   "pages": {
//!     "/": { "file": "index.html" },
//!     "/old": { "redirect": "/mip.php" },
//!     "/gone": { "status": 404 }
//!   },
//!   "forms": [
//!     { "path": "/mip.php", "method": "POST", "field": "Phenotype",
//!       "responses": [{ "contains": "h2a", "file": "h2a.html" }],
//!       "fallback": "none.html" }
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use super::fetch::{FetchError, FetchRequest, FetchResponse, Fetcher};
use super::FormMethod;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PageSpec {
    pub file: Option<String>,
    pub content_type: Option<String>,
    pub status: Option<u16>,
    pub redirect: Option<String>,
    /// Never answers.
    pub timeout: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormResponse {
    pub contains: String,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormRoute {
    pub path: String,
    pub method: FormMethod,
    pub field: String,
    #[serde(default)]
    pub responses: Vec<FormResponse>,
    #[serde(default)]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteSpec {
    pub base_url: String,
    #[serde(default)]
    pub pages: BTreeMap<String, PageSpec>,
    #[serde(default)]
    pub forms: Vec<FormRoute>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SiteReply {
    Body {
        status: u16,
        content_type: String,
        body: Vec<u8>,
    },
    Redirect {
        location: String,
    },
    Timeout,
}

impl SiteReply {
    fn not_found() -> SiteReply {
        SiteReply::Body {
            status: 404,
            content_type: "text/plain".into(),
            body: b"not found".to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSite {
    spec: SiteSpec,
    host: String,
    files: HashMap<String, Vec<u8>>,
}

fn guess_content_type(file: &str) -> &'static str {
    match file.rsplit('.').next().map(str::to_lowercase).as_deref() {
        Some("html" | "htm" | "php") => "text/html; charset=utf-8",
        Some("csv") => "text/csv",
        Some("tsv") => "text/tab-separated-values",
        Some("json") => "application/json",
        Some("xls") => "application/vnd.ms-excel",
        Some("zip") => "application/zip",
        _ => "text/plain",
    }
}

fn bare_host(host: &str) -> String {
    let h = host.to_lowercase();
    h.strip_prefix("www.").unwrap_or(&h).to_string()
}

impl FixtureSite {
    pub fn load(dir: &Path) -> Result<FixtureSite, FixtureError> {
        let spec_path = dir.join("site.json");
        let text = std::fs::read_to_string(&spec_path).map_err(|source| FixtureError::Io {
            path: spec_path.clone(),
            source,
        })?;
        let spec: SiteSpec = serde_json::from_str(&text).map_err(|e| FixtureError::Format {
            path: spec_path.clone(),
            detail: e.to_string(),
        })?;
        let mut names: Vec<&String> = spec.pages.values().filter_map(|p| p.file.as_ref()).collect();
        for f in &spec.forms {
            names.extend(f.responses.iter().map(|r| &r.file));
            names.extend(f.fallback.iter());
        }
        let mut files = HashMap::new();
        for name in names {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|source| FixtureError::Io { path, source })?;
            files.insert(name.clone(), bytes);
        }
        FixtureSite::from_parts(spec, files).map_err(|detail| FixtureError::Format { path: spec_path, detail })
    }

    pub fn from_parts(spec: SiteSpec, files: HashMap<String, Vec<u8>>) -> Result<FixtureSite, String> {
        let base = Url::parse(&spec.base_url).map_err(|e| format!("base_url: {e}"))?;
        let host = bare_host(base.host_str().ok_or("base_url has no host")?);
        Ok(FixtureSite { spec, host, files })
    }

    /// Host without `www.`.
    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn base_url(&self) -> &str {
        &self.spec.base_url
    }

    fn file_reply(&self, name: &str, content_type: Option<&str>, status: u16) -> SiteReply {
        match self.files.get(name) {
            Some(body) => SiteReply::Body {
                status,
                content_type: content_type.unwrap_or_else(|| guess_content_type(name)).to_string(),
                body: body.clone(),
            },
            None => SiteReply::not_found(),
        }
    }

    fn page(&self, path: &str) -> Option<&PageSpec> {
        self.spec.pages.get(path).or_else(|| {
            let alt = match path.strip_suffix('/') {
                Some(p) if !p.is_empty() => p.to_string(),
                _ => format!("{path}/"),
            };
            self.spec.pages.get(&alt)
        })
    }

    /// Answers one request. `query` and `body` are raw urlencoded strings.
    pub fn respond(&self, method: FormMethod, path: &str, query: Option<&str>, body: Option<&str>) -> SiteReply {
        let same_path = |a: &str| a.trim_end_matches('/') == path.trim_end_matches('/');
        let params = match method {
            FormMethod::Get => query,
            FormMethod::Post => body,
        };
        for route in self.spec.forms.iter().filter(|r| r.method == method && same_path(&r.path)) {
            let value = params.and_then(|p| {
                url::form_urlencoded::parse(p.as_bytes())
                    .find(|(k, _)| k.eq_ignore_ascii_case(&route.field))
                    .map(|(_, v)| v.into_owned())
            });
            let Some(value) = value else {
                if method == FormMethod::Post {
                    return route
                        .fallback
                        .as_deref()
                        .map(|f| self.file_reply(f, None, 200))
                        .unwrap_or_else(SiteReply::not_found);
                }
                continue;
            };
            let v = value.to_lowercase();
            let file = route
                .responses
                .iter()
                .find(|r| v.contains(&r.contains.to_lowercase()))
                .map(|r| r.file.as_str())
                .or(route.fallback.as_deref());
            return match file {
                Some(f) => self.file_reply(f, None, 200),
                None => SiteReply::not_found(),
            };
        }
        if method == FormMethod::Post {
            return SiteReply::Body {
                status: 405,
                content_type: "text/plain".into(),
                body: b"method not allowed".to_vec(),
            };
        }
        let Some(page) = self.page(path) else {
            return SiteReply::not_found();
        };
        if page.timeout {
            return SiteReply::Timeout;
        }
        if let Some(to) = &page.redirect {
            return SiteReply::Redirect { location: to.clone() };
        }
        let status = page.status.unwrap_or(200);
        match &page.file {
            Some(f) => self.file_reply(f, page.content_type.as_deref(), status),
            None => SiteReply::Body {
                status,
                content_type: "text/plain".into(),
                body: Vec::new(),
            },
        }
    }
}

/// In-process fetcher over a set of fixture sites. Unknown hosts fail the way
/// an unresolvable name would.
#[derive(Debug, Clone, Default)]
pub struct FixtureWeb {
    sites: HashMap<String, FixtureSite>,
    max_redirects: usize,
}

impl FixtureWeb {
    pub fn new() -> Self {
        Self {
            sites: HashMap::new(),
            max_redirects: 5,
        }
    }

    /// Loads every subdirectory of `root` that contains a `site.json`.
    pub fn load_dir(root: &Path) -> Result<FixtureWeb, FixtureError> {
        let mut web = FixtureWeb::new();
        let entries = std::fs::read_dir(root).map_err(|source| FixtureError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.join("site.json").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            web.add(FixtureSite::load(&dir)?);
        }
        Ok(web)
    }

    pub fn add(&mut self, site: FixtureSite) {
        self.sites.insert(site.host().to_string(), site);
    }

    pub fn site(&self, host: &str) -> Option<&FixtureSite> {
        self.sites.get(&bare_host(host))
    }

    pub fn sites(&self) -> impl Iterator<Item = &FixtureSite> {
        let mut all: Vec<_> = self.sites.values().collect();
        all.sort_by(|a, b| a.host.cmp(&b.host));
        all.into_iter()
    }
}

impl Fetcher for FixtureWeb {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, FetchError> {
        let mut url = request.url.clone();
        let mut method = request.method;
        let mut body = request.body.clone();
        for _ in 0..=self.max_redirects {
            let site = url.host_str().and_then(|h| self.site(h)).ok_or_else(|| FetchError::Transport {
                url: url.to_string(),
                detail: "host not resolvable".into(),
            })?;
            match site.respond(method, url.path(), url.query(), body.as_deref()) {
                SiteReply::Timeout => return Err(FetchError::Timeout { url: url.to_string() }),
                SiteReply::Redirect { location } => {
                    url = url.join(&location).map_err(|_| FetchError::InvalidUrl { url: location })?;
                    method = FormMethod::Get;
                    body = None;
                }
                SiteReply::Body {
                    status,
                    content_type,
                    body,
                } => {
                    if !(200..300).contains(&status) {
                        return Err(FetchError::from_status(&url, status));
                    }
                    return Ok(FetchResponse {
                        final_url: url,
                        status,
                        content_type: Some(content_type),
                        body,
                    });
                }
            }
        }
        Err(FetchError::TooManyRedirects {
            url: request.url.to_string(),
            limit: self.max_redirects,
        })
    }
}
