//! Turning a data source's web presence into a relational table.
//!
//! [`discover`] fetches the source page, scores its links against the
//! retrieval query, keeps the relevant ones and classifies every candidate
//! (the page itself included) as a downloadable file, an HTML table page or a
//! form page. Candidates come back in access priority order: downloadables
//! first, then table pages, then forms. [`materialize`] turns one candidate
//! into a [`DataTable`]; [`smart_wrap`] tries candidates in order and stops
//! at the first table with rows.

mod delimited;
mod fetch;
mod fixture_web;
mod html;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub use delimited::{has_header, parse_delimited, parse_json_table, sniff_delimiter};
pub use fetch::{FetchConfig, FetchError, FetchRequest, FetchResponse, Fetcher, HttpFetcher};
pub use fixture_web::{FixtureError, FixtureSite, FixtureWeb, FormResponse, FormRoute, PageSpec, SiteReply, SiteSpec};
pub use html::{
    extract_forms, harvest_links_from_html, page_title, parse_html_tables, table_row_counts, visible_text, FieldKind,
    FormField, FormMethod, FormSchema, RawLink, SNIPPET_RADIUS,
};

use crate::assistant::{ask, Assistant, AssistantCall, AssistantError, FormAssignment, SynthesizedTable};
use crate::corpus::{cosine_similarity, embed_text, EmbedError, Embedder, EmbeddingVector, SimilarityError};
use crate::query::QueryBundle;
use crate::table::{DataTable, ExtractionMethod, Provenance};
use crate::text::parse_loose_url;

const DOWNLOAD_EXTENSIONS: &[&str] = &["csv", "tsv", "tab", "xls", "xlsx", "zip", "json"];
const DOWNLOAD_TYPES: &[&str] = &[
    "text/csv",
    "text/tab-separated-values",
    "application/csv",
    "application/json",
    "application/zip",
    "application/vnd.ms-excel",
    "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
];
const MAX_SYNTHESIS_CHARS: usize = 20_000;

#[derive(Debug, Error)]
pub enum WrapError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Assistant(#[from] AssistantError),
    #[error("{url}: no form with a fillable field")]
    NothingFillable { url: String },
    #[error("{url}: no table with rows")]
    NoTable { url: String },
    #[error("{url}: unsupported download format `{format}`")]
    UnsupportedFormat { url: String, format: String },
    #[error("invalid data link `{0}`")]
    InvalidLink(String),
}

impl WrapError {
    /// Stable error class for reports.
    pub fn class(&self) -> &'static str {
        match self {
            WrapError::Fetch(e) => e.class(),
            WrapError::Embed(_) | WrapError::Similarity(_) => "embedding",
            WrapError::Assistant(_) => "assistant",
            WrapError::NothingFillable { .. } => "nothing_fillable",
            WrapError::NoTable { .. } => "no_table",
            WrapError::UnsupportedFormat { .. } => "unsupported_format",
            WrapError::InvalidLink(_) => "invalid_url",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    Downloadable,
    HtmlTable,
    FormPage,
    Other,
}

impl LinkClass {
    fn priority(self) -> u8 {
        match self {
            LinkClass::Downloadable => 0,
            LinkClass::HtmlTable => 1,
            LinkClass::FormPage => 2,
            LinkClass::Other => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub url: String,
    pub anchor_text: String,
    pub context_snippet: String,
    #[serde(default)]
    pub classification: Option<LinkClass>,
    #[serde(default)]
    pub relevance: f64,
    /// Why classification failed, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FetchError>,
}

impl LinkRecord {
    fn from_raw(raw: RawLink) -> Self {
        Self {
            url: raw.url.to_string(),
            anchor_text: raw.anchor_text,
            context_snippet: raw.context_snippet,
            classification: None,
            relevance: 0.0,
            error: None,
        }
    }

    fn relevance_text(&self) -> String {
        format!("{} {}", self.anchor_text, self.context_snippet)
    }

    fn file_name(&self) -> String {
        Url::parse(&self.url)
            .ok()
            .and_then(|u| u.path_segments().and_then(|s| s.last().map(str::to_string)))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrapConfig {
    /// Minimum link relevance kept by [`filter_links`].
    pub threshold: f64,
    /// Links considered per page, in document order.
    pub max_links: usize,
    /// Ask the assistant to build a table from a result page without one.
    pub synthesize: bool,
}

impl Default for WrapConfig {
    fn default() -> Self {
        Self {
            threshold: 0.15,
            max_links: 100,
            synthesize: true,
        }
    }
}

/// Backends a wrapping session uses. All network access goes through
/// `fetcher`.
#[derive(Clone, Copy)]
pub struct WrapContext<'a> {
    pub fetcher: &'a dyn Fetcher,
    pub embedder: &'a dyn Embedder,
    pub assistant: &'a dyn Assistant,
    pub config: WrapConfig,
}

fn get(fetcher: &dyn Fetcher, url: &str) -> Result<FetchResponse, WrapError> {
    let url = parse_loose_url(url).ok_or_else(|| WrapError::InvalidLink(url.to_string()))?;
    Ok(fetcher.fetch(&FetchRequest::get(url))?)
}

fn score(text: &str, target: &EmbeddingVector, embedder: &dyn Embedder) -> Result<f64, WrapError> {
    match embed_text(text, embedder) {
        Ok(v) => Ok(cosine_similarity(&v, target)?),
        Err(EmbedError::EmptyText) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

/// All links on the page at `page_url`.
pub fn harvest_links(page_url: &str, fetcher: &dyn Fetcher) -> Result<Vec<LinkRecord>, WrapError> {
    let page = get(fetcher, page_url)?;
    Ok(links_of(&page))
}

fn links_of(page: &FetchResponse) -> Vec<LinkRecord> {
    if !page.is_html() {
        return Vec::new();
    }
    harvest_links_from_html(&page.text(), &page.final_url)
        .into_iter()
        .map(LinkRecord::from_raw)
        .collect()
}

/// Scores every link against the retrieval query (stored in `relevance`)
/// and keeps those at or above `threshold`, in order.
pub fn filter_links(
    links: &mut [LinkRecord],
    retrieval_query: &str,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<LinkRecord>, WrapError> {
    let target = embed_text(retrieval_query, embedder)?;
    for link in links.iter_mut() {
        link.relevance = score(&link.relevance_text(), &target, embedder)?;
    }
    Ok(links.iter().filter(|l| l.relevance >= threshold).cloned().collect())
}

fn extension_of(url: &Url) -> Option<String> {
    let last = url.path_segments()?.last()?.to_lowercase();
    let (_, ext) = last.rsplit_once('.')?;
    Some(ext.to_string())
}

fn is_download(url: &Url, page: Option<&FetchResponse>) -> bool {
    extension_of(url).is_some_and(|e| DOWNLOAD_EXTENSIONS.contains(&e.as_str()))
        || page
            .and_then(FetchResponse::media_type)
            .is_some_and(|m| DOWNLOAD_TYPES.contains(&m.as_str()))
}

/// Classifies an already fetched page. Precedence: downloadable, table page,
/// form page.
pub fn classify_page(url: &Url, page: &FetchResponse) -> LinkClass {
    if is_download(url, Some(page)) || is_download(&page.final_url, Some(page)) {
        return LinkClass::Downloadable;
    }
    if !page.is_html() {
        return LinkClass::Other;
    }
    let html = page.text();
    if table_row_counts(&html).into_iter().any(|n| n >= 2) {
        LinkClass::HtmlTable
    } else if extract_forms(&html, &page.final_url).iter().any(FormSchema::is_fillable) {
        LinkClass::FormPage
    } else {
        LinkClass::Other
    }
}

/// Fetches `url` and classifies it; the fetched page is returned for reuse.
pub fn classify_link(url: &str, fetcher: &dyn Fetcher) -> Result<(LinkClass, FetchResponse), WrapError> {
    let page = get(fetcher, url)?;
    let parsed = Url::parse(url).unwrap_or_else(|_| page.final_url.clone());
    Ok((classify_page(&parsed, &page), page))
}

fn downloadable_score(link: &LinkRecord, target: &EmbeddingVector, embedder: &dyn Embedder) -> Result<f64, WrapError> {
    let text = format!("{} {} {}", link.anchor_text, link.context_snippet, link.file_name().replace(['_', '-', '.'], " "));
    score(&text, target, embedder)
}

/// The downloadable whose anchor, context and file name best match the
/// retrieval query; exact ties go to the smaller URL.
pub fn rank_downloadables<'l>(
    links: &'l [LinkRecord],
    retrieval_query: &str,
    embedder: &dyn Embedder,
) -> Result<Option<&'l LinkRecord>, WrapError> {
    let target = embed_text(retrieval_query, embedder)?;
    let mut best: Option<(f64, &LinkRecord)> = None;
    for link in links {
        let s = downloadable_score(link, &target, embedder)?;
        let better = match best {
            None => true,
            Some((bs, bl)) => s > bs || (s == bs && link.url < bl.url),
        };
        if better {
            best = Some((s, link));
        }
    }
    Ok(best.map(|(_, l)| l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFill {
    pub target_form: usize,
    pub assignments: BTreeMap<String, String>,
}

fn check_fill(forms: &[FormSchema], a: &FormAssignment) -> Result<(), String> {
    let form = forms
        .get(a.form)
        .ok_or_else(|| format!("form index {} out of range ({} forms)", a.form, forms.len()))?;
    if !form.is_fillable() {
        return Err(format!("form {} has no fillable field", a.form));
    }
    for (name, value) in &a.assignments {
        let field = form.field(name).ok_or_else(|| format!("form has no field `{name}`"))?;
        if !field.kind.is_fillable() {
            return Err(format!("field `{name}` cannot be filled"));
        }
        if matches!(field.kind, FieldKind::Select | FieldKind::Radio) && !field.options.contains(value) {
            return Err(format!("`{value}` is not an option of `{name}`"));
        }
    }
    Ok(())
}

/// Asks the assistant which form to use and what to put in it. The answer
/// must name existing, fillable fields and valid options.
pub fn plan_form_fill(
    forms: &[FormSchema],
    query: &QueryBundle,
    assistant: &dyn Assistant,
    page_url: &str,
) -> Result<FormFill, WrapError> {
    if !forms.iter().any(FormSchema::is_fillable) {
        return Err(WrapError::NothingFillable { url: page_url.to_string() });
    }
    let call = AssistantCall::FillForm {
        retrieval_query: query.retrieval_query.clone(),
        keywords: query.keywords.clone(),
        forms: forms.to_vec(),
    };
    let a: FormAssignment = ask(assistant, &call, |a| check_fill(forms, a))?;
    Ok(FormFill {
        target_form: a.form,
        assignments: a.assignments,
    })
}

/// Name/value pairs a browser would submit: assigned values, else defaults.
pub fn form_pairs(fill: &FormFill, form: &FormSchema) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut submitted = false;
    for f in form.fields.iter().filter(|f| !f.name.is_empty()) {
        let assigned = fill.assignments.get(&f.name);
        let value = assigned.cloned().unwrap_or_else(|| f.default.clone());
        match f.kind {
            FieldKind::Submit => {
                if !submitted {
                    pairs.push((f.name.clone(), value));
                    submitted = true;
                }
            }
            FieldKind::Checkbox | FieldKind::Radio | FieldKind::Select => {
                if !value.is_empty() {
                    pairs.push((f.name.clone(), value));
                }
            }
            FieldKind::Text | FieldKind::Hidden => pairs.push((f.name.clone(), value)),
        }
    }
    pairs
}

/// Submits the form once: GET encodes the query string, POST a urlencoded
/// body.
pub fn execute_form(fill: &FormFill, form: &FormSchema, fetcher: &dyn Fetcher) -> Result<FetchResponse, WrapError> {
    let mut url = Url::parse(&form.action_url).map_err(|_| WrapError::InvalidLink(form.action_url.clone()))?;
    let pairs = form_pairs(fill, form);
    let request = match form.method {
        FormMethod::Get => {
            url.query_pairs_mut().extend_pairs(pairs.iter());
            FetchRequest::get(url)
        }
        FormMethod::Post => FetchRequest {
            method: FormMethod::Post,
            url,
            body: Some(url::form_urlencoded::Serializer::new(String::new()).extend_pairs(pairs.iter()).finish()),
        },
    };
    Ok(fetcher.fetch(&request)?)
}

/// A classified access path, in priority order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub link: LinkRecord,
    pub class: LinkClass,
    /// Score used to order candidates within a class.
    pub score: f64,
    #[serde(skip)]
    page: Option<Arc<FetchResponse>>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.link == other.link && self.class == other.class && self.score == other.score
    }
}

impl Candidate {
    pub fn url(&self) -> &str {
        &self.link.url
    }

    pub fn label(&self) -> String {
        let anchor = if self.link.anchor_text.is_empty() { "(page)" } else { &self.link.anchor_text };
        format!("{anchor} [{}]", serde_json::to_value(self.class).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub base_url: String,
    /// Every harvested link, scored and (when kept) classified.
    pub links: Vec<LinkRecord>,
    /// URLs of the links that passed the relevance filter.
    pub filtered: Vec<String>,
    pub candidates: Vec<Candidate>,
}

fn table_relevance(link: &LinkRecord, table: &DataTable, target: &EmbeddingVector, embedder: &dyn Embedder) -> Result<f64, WrapError> {
    let mut text = format!("{} {} {}", link.anchor_text, link.context_snippet, table.column_names().join(" "));
    for row in table.rows.iter().take(3) {
        for c in row {
            text.push(' ');
            text.push_str(&c.render());
        }
    }
    score(&text, target, embedder)
}

/// The table with rows that best matches the retrieval query; earlier
/// tables win ties.
pub fn best_table(
    tables: Vec<DataTable>,
    link: &LinkRecord,
    retrieval_query: &str,
    embedder: &dyn Embedder,
) -> Result<Option<(DataTable, f64)>, WrapError> {
    let target = embed_text(retrieval_query, embedder)?;
    let mut best: Option<(DataTable, f64)> = None;
    for t in tables.into_iter().filter(|t| !t.rows.is_empty()) {
        let s = table_relevance(link, &t, &target, embedder)?;
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((t, s));
        }
    }
    Ok(best)
}

/// Fetches the source page, filters and classifies its links, and orders
/// the access candidates.
pub fn discover(data_link: &str, query: &QueryBundle, ctx: &WrapContext) -> Result<Discovery, WrapError> {
    let base = get(ctx.fetcher, data_link)?;
    let base_url = base.final_url.to_string();
    let base_page = Arc::new(base);
    let mut links = links_of(&base_page);
    links.truncate(ctx.config.max_links);
    let kept: Vec<String> = filter_links(&mut links, &query.retrieval_query, ctx.embedder, ctx.config.threshold)?
        .into_iter()
        .map(|l| l.url)
        .collect();

    let base_record = LinkRecord {
        url: base_url.clone(),
        anchor_text: String::new(),
        context_snippet: if base_page.is_html() {
            page_title(&base_page.text()).unwrap_or_default()
        } else {
            String::new()
        },
        classification: None,
        relevance: 0.0,
        error: None,
    };
    let base_class = classify_page(&base_page.final_url, &base_page);
    let mut candidates = vec![Candidate {
        link: LinkRecord {
            classification: Some(base_class),
            ..base_record
        },
        class: base_class,
        score: 0.0,
        page: Some(base_page.clone()),
    }];
    for link in links.iter_mut().filter(|l| kept.contains(&l.url)) {
        if link.url == base_url {
            continue;
        }
        match classify_link(&link.url, ctx.fetcher) {
            Ok((class, page)) => {
                link.classification = Some(class);
                candidates.push(Candidate {
                    link: link.clone(),
                    class,
                    score: link.relevance,
                    page: Some(Arc::new(page)),
                });
            }
            Err(WrapError::Fetch(e)) => {
                tracing::debug!(url = %link.url, error = %e, "link not classifiable");
                link.error = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    candidates.retain(|c| c.class != LinkClass::Other);

    let target = embed_text(&query.retrieval_query, ctx.embedder)?;
    for c in candidates.iter_mut() {
        c.score = match c.class {
            LinkClass::Downloadable => downloadable_score(&c.link, &target, ctx.embedder)?,
            LinkClass::HtmlTable => {
                let page = c.page.as_ref().expect("classified candidates keep their page");
                let tables = parse_html_tables(&page.text(), &c.link.url);
                best_table(tables, &c.link, &query.retrieval_query, ctx.embedder)?
                    .map(|(_, s)| s)
                    .unwrap_or(0.0)
            }
            _ => c.link.relevance,
        };
    }
    // stable: equal scores keep discovery order (page first, then links)
    candidates.sort_by(|a, b| {
        a.class
            .priority()
            .cmp(&b.class.priority())
            .then(b.score.total_cmp(&a.score))
            .then_with(|| {
                if a.class == LinkClass::Downloadable {
                    a.link.url.cmp(&b.link.url)
                } else {
                    std::cmp::Ordering::Equal
                }
            })
    });
    Ok(Discovery {
        base_url,
        links,
        filtered: kept,
        candidates,
    })
}

fn parse_download(url: &str, page: &FetchResponse) -> Result<DataTable, WrapError> {
    let parsed = Url::parse(url).ok();
    let ext = parsed.as_ref().and_then(extension_of).or_else(|| extension_of(&page.final_url));
    let media = page.media_type().unwrap_or_default();
    let format = match (ext.as_deref(), media.as_str()) {
        (Some("json"), _) | (_, "application/json") => "json",
        (Some("tsv" | "tab"), _) | (_, "text/tab-separated-values") => "tsv",
        (Some("csv"), _) | (_, "text/csv" | "application/csv") => "csv",
        (Some(e), _) => e,
        (None, m) => m,
    };
    let text = page.text();
    match format {
        "json" => parse_json_table(&text, url).ok_or_else(|| WrapError::NoTable { url: url.to_string() }),
        "tsv" => Ok(parse_delimited(&text, url, Some(b'\t'))),
        "csv" => Ok(parse_delimited(&text, url, None)),
        other => Err(WrapError::UnsupportedFormat {
            url: url.to_string(),
            format: other.to_string(),
        }),
    }
}

/// Every table a response carries: the parsed download, or the HTML tables
/// in document order.
pub fn response_tables(page: &FetchResponse) -> Result<Vec<DataTable>, WrapError> {
    let url = page.final_url.to_string();
    if is_download(&page.final_url, Some(page)) {
        Ok(vec![parse_download(&url, page)?])
    } else if page.is_html() {
        Ok(parse_html_tables(&page.text(), &url))
    } else {
        Ok(Vec::new())
    }
}

/// GET a loosely written URL.
pub fn fetch_page(fetcher: &dyn Fetcher, url: &str) -> Result<FetchResponse, WrapError> {
    get(fetcher, url)
}

fn synthesize(page: &FetchResponse, query: &QueryBundle, assistant: &dyn Assistant) -> Result<DataTable, WrapError> {
    let text: String = visible_text(&page.text()).chars().take(MAX_SYNTHESIS_CHARS).collect();
    let call = AssistantCall::SynthesizeTable {
        retrieval_query: query.retrieval_query.clone(),
        page_text: text,
    };
    let t: SynthesizedTable = ask(assistant, &call, |t: &SynthesizedTable| {
        if !t.rows.is_empty() && t.columns.is_empty() {
            return Err("rows without columns".into());
        }
        match t.rows.iter().position(|r| r.len() != t.columns.len()) {
            Some(i) => Err(format!("row {i} has {} cells, expected {}", t.rows[i].len(), t.columns.len())),
            None => Ok(()),
        }
    })?;
    Ok(DataTable::from_text(
        t.columns,
        t.rows,
        Provenance {
            source_url: page.final_url.to_string(),
            method: ExtractionMethod::AssistantSynthesized,
        },
    ))
}

/// Table from a form's result page: a download, the best HTML table, or
/// (when enabled) an assistant synthesis of the page text.
fn result_table(page: &FetchResponse, link: &LinkRecord, query: &QueryBundle, ctx: &WrapContext) -> Result<DataTable, WrapError> {
    let url = page.final_url.to_string();
    if is_download(&page.final_url, Some(page)) {
        let mut t = parse_download(&url, page)?;
        t.provenance.method = ExtractionMethod::Form;
        return non_empty(t, &url);
    }
    let tables = parse_html_tables(&page.text(), &url);
    if let Some((mut t, _)) = best_table(tables, link, &query.retrieval_query, ctx.embedder)? {
        t.provenance.method = ExtractionMethod::Form;
        return Ok(t);
    }
    if ctx.config.synthesize && page.is_html() {
        return non_empty(synthesize(page, query, ctx.assistant)?, &url);
    }
    Err(WrapError::NoTable { url })
}

fn non_empty(t: DataTable, url: &str) -> Result<DataTable, WrapError> {
    if t.rows.is_empty() || t.columns.is_empty() {
        Err(WrapError::NoTable { url: url.to_string() })
    } else {
        Ok(t)
    }
}

fn page_of(candidate: &Candidate, fetcher: &dyn Fetcher) -> Result<Arc<FetchResponse>, WrapError> {
    match &candidate.page {
        Some(p) => Ok(p.clone()),
        None => Ok(Arc::new(get(fetcher, &candidate.link.url)?)),
    }
}

/// Runs one candidate's access strategy.
pub fn materialize(candidate: &Candidate, query: &QueryBundle, ctx: &WrapContext) -> Result<DataTable, WrapError> {
    let page = page_of(candidate, ctx.fetcher)?;
    let url = candidate.link.url.clone();
    match candidate.class {
        LinkClass::Downloadable => non_empty(parse_download(&url, &page)?, &url),
        LinkClass::HtmlTable => {
            let tables = parse_html_tables(&page.text(), &url);
            best_table(tables, &candidate.link, &query.retrieval_query, ctx.embedder)?
                .map(|(t, _)| t)
                .ok_or(WrapError::NoTable { url })
        }
        LinkClass::FormPage => {
            let forms = extract_forms(&page.text(), &page.final_url);
            let fill = plan_form_fill(&forms, query, ctx.assistant, &url)?;
            let result = execute_form(&fill, &forms[fill.target_form], ctx.fetcher)?;
            result_table(&result, &candidate.link, query, ctx)
        }
        LinkClass::Other => Err(WrapError::NoTable { url }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub url: String,
    pub class: LinkClass,
    pub error_class: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WrapOutcome {
    Wrapped {
        table: DataTable,
        candidate: Candidate,
        discovery: Discovery,
        attempts: Vec<Attempt>,
    },
    Unsuitable {
        url: String,
        reason: String,
        error_class: String,
        attempts: Vec<Attempt>,
    },
}

impl WrapOutcome {
    pub fn table(&self) -> Option<&DataTable> {
        match self {
            WrapOutcome::Wrapped { table, .. } => Some(table),
            WrapOutcome::Unsuitable { .. } => None,
        }
    }
}

/// Tries candidates in priority order; the first table with rows wins.
pub fn try_candidates(discovery: Discovery, query: &QueryBundle, ctx: &WrapContext) -> WrapOutcome {
    let mut attempts = Vec::new();
    for c in &discovery.candidates {
        match materialize(c, query, ctx) {
            Ok(table) => {
                return WrapOutcome::Wrapped {
                    table,
                    candidate: c.clone(),
                    attempts,
                    discovery,
                }
            }
            Err(e) => attempts.push(Attempt {
                url: c.link.url.clone(),
                class: c.class,
                error_class: e.class().to_string(),
                error: e.to_string(),
            }),
        }
    }
    let (reason, error_class) = match attempts.last() {
        Some(a) => (format!("no candidate produced a table; last: {}", a.error), a.error_class.clone()),
        None => ("no access path found".to_string(), "no_candidates".to_string()),
    };
    WrapOutcome::Unsuitable {
        url: discovery.base_url,
        reason,
        error_class,
        attempts,
    }
}

/// Discovery plus ordered materialization. Never fails: problems become an
/// unsuitable outcome carrying the error class.
pub fn smart_wrap(data_link: &str, query: &QueryBundle, ctx: &WrapContext) -> WrapOutcome {
    match discover(data_link, query, ctx) {
        Ok(d) => try_candidates(d, query, ctx),
        Err(e) => WrapOutcome::Unsuitable {
            url: data_link.to_string(),
            reason: e.to_string(),
            error_class: e.class().to_string(),
            attempts: Vec::new(),
        },
    }
}
