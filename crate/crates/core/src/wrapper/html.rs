//! Tolerant HTML reading: links with context, tables, forms, visible text.

use ego_tree::iter::Edge;
use scraper::node::Node;
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::table::{DataTable, ExtractionMethod, Provenance};

/// Characters of surrounding text kept on each side of an anchor.
pub const SNIPPET_RADIUS: usize = 120;
const MAX_COLSPAN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FormMethod {
    Get,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Select,
    Checkbox,
    Radio,
    Hidden,
    Submit,
}

impl FieldKind {
    /// Whether a user (or the assistant) can choose a value.
    pub fn is_fillable(&self) -> bool {
        matches!(self, FieldKind::Text | FieldKind::Select | FieldKind::Checkbox | FieldKind::Radio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormField {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub default: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormSchema {
    pub action_url: String,
    pub method: FormMethod,
    pub fields: Vec<FormField>,
}

impl FormSchema {
    pub fn field(&self, name: &str) -> Option<&FormField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn is_fillable(&self) -> bool {
        self.fields.iter().any(|f| f.kind.is_fillable())
    }
}

/// An anchor found on a page, before classification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLink {
    pub url: Url,
    pub anchor_text: String,
    pub context_snippet: String,
}

fn sel(s: &str) -> Selector {
    Selector::parse(s).expect("static selector")
}

fn is_block(name: &str) -> bool {
    matches!(
        name,
        "p" | "div" | "br" | "li" | "ul" | "ol" | "tr" | "table" | "section" | "article" | "header"
            | "footer" | "nav" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "form" | "dd" | "dt"
            | "pre" | "blockquote" | "title" | "body"
    )
}

fn is_hidden_content(name: &str) -> bool {
    matches!(name, "script" | "style" | "noscript" | "template" | "head")
}

fn push_text(buf: &mut String, text: &str) {
    for c in text.chars() {
        if c.is_whitespace() {
            if !buf.is_empty() && !buf.ends_with([' ', '\n']) {
                buf.push(' ');
            }
        } else {
            buf.push(c);
        }
    }
}

// never shrinks the buffer: recorded anchor offsets stay valid
fn push_break(buf: &mut String) {
    if buf.ends_with(' ') {
        buf.pop();
        buf.push('\n');
    } else if !buf.is_empty() && !buf.ends_with('\n') {
        buf.push('\n');
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct AnchorSpan {
    href: String,
    fallback: Option<String>,
    start: usize,
    end: usize,
}

/// Visible text of the document, with anchor spans recorded as byte ranges.
fn flatten(doc: &Html) -> (String, Vec<AnchorSpan>) {
    let mut buf = String::new();
    let mut anchors = Vec::new();
    let mut open: Vec<(usize, Option<usize>)> = Vec::new();
    let mut skip_depth = 0usize;
    for edge in doc.tree.root().traverse() {
        match edge {
            Edge::Open(node) => match node.value() {
                Node::Element(e) => {
                    let name = e.name();
                    if skip_depth > 0 || is_hidden_content(name) {
                        skip_depth += 1;
                        continue;
                    }
                    if is_block(name) {
                        push_break(&mut buf);
                    }
                    let anchor = if name == "a" {
                        e.attr("href").map(|href| {
                            let fallback = e.attr("title").map(str::to_string).or_else(|| {
                                ElementRef::wrap(node)
                                    .and_then(|el| el.select(&sel("img[alt]")).next())
                                    .and_then(|img| img.value().attr("alt").map(str::to_string))
                            });
                            anchors.push(AnchorSpan {
                                href: href.to_string(),
                                fallback,
                                start: buf.len(),
                                end: buf.len(),
                            });
                            anchors.len() - 1
                        })
                    } else {
                        None
                    };
                    open.push((buf.len(), anchor));
                }
                Node::Text(t) if skip_depth == 0 => push_text(&mut buf, t),
                _ => {}
            },
            Edge::Close(node) => {
                if let Node::Element(e) = node.value() {
                    if skip_depth > 0 {
                        skip_depth -= 1;
                        continue;
                    }
                    if let Some((_, Some(i))) = open.pop() {
                        anchors[i].end = buf.len();
                    }
                    if is_block(e.name()) {
                        push_break(&mut buf);
                    }
                }
            }
        }
    }
    (buf, anchors)
}

fn snippet(buf: &str, start: usize, end: usize) -> String {
    let before: String = {
        let mut v: Vec<char> = buf[..start].chars().rev().take(SNIPPET_RADIUS).collect();
        v.reverse();
        v.into_iter().collect()
    };
    let after: String = buf[end..].chars().take(SNIPPET_RADIUS).collect();
    collapse(&format!("{before}{}{after}", &buf[start..end]))
}

fn resolve_href(base: &Url, href: &str) -> Option<Url> {
    let href = href.trim();
    let lower = href.to_lowercase();
    if href.is_empty()
        || href.starts_with('#')
        || ["javascript:", "mailto:", "tel:", "data:"].iter().any(|p| lower.starts_with(p))
    {
        return None;
    }
    let mut url = base.join(href).ok()?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return None;
    }
    url.set_fragment(None);
    Some(url)
}

fn document_base(doc: &Html, page_url: &Url) -> Url {
    doc.select(&sel("base[href]"))
        .next()
        .and_then(|b| b.value().attr("href"))
        .and_then(|h| page_url.join(h).ok())
        .unwrap_or_else(|| page_url.clone())
}

/// Every navigable anchor, resolved against the page (or its `<base>`),
/// deduplicated by URL in document order.
pub fn harvest_links_from_html(html: &str, page_url: &Url) -> Vec<RawLink> {
    let doc = Html::parse_document(html);
    let base = document_base(&doc, page_url);
    let (buf, anchors) = flatten(&doc);
    let mut out: Vec<RawLink> = Vec::new();
    for a in anchors {
        let Some(url) = resolve_href(&base, &a.href) else {
            continue;
        };
        if out.iter().any(|l| l.url == url) {
            continue;
        }
        let mut anchor_text = collapse(&buf[a.start..a.end]);
        if anchor_text.is_empty() {
            anchor_text = a.fallback.map(|f| collapse(&f)).unwrap_or_default();
        }
        out.push(RawLink {
            url,
            anchor_text,
            context_snippet: snippet(&buf, a.start, a.end),
        });
    }
    out
}

/// Visible text with line breaks at block boundaries.
pub fn visible_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let (buf, _) = flatten(&doc);
    buf.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("\n")
}

pub fn page_title(html: &str) -> Option<String> {
    let doc = Html::parse_document(html);
    let t = doc.select(&sel("title")).next().map(|t| collapse(&t.text().collect::<String>()))?;
    (!t.is_empty()).then_some(t)
}

fn element_children<'a>(el: ElementRef<'a>) -> impl Iterator<Item = ElementRef<'a>> {
    el.children().filter_map(ElementRef::wrap)
}

struct RawTable {
    header: Option<Vec<String>>,
    rows: Vec<Vec<String>>,
}

fn row_cells(tr: ElementRef) -> Vec<String> {
    let mut cells = Vec::new();
    for cell in element_children(tr).filter(|c| matches!(c.value().name(), "td" | "th")) {
        let text = collapse(&cell.text().collect::<String>());
        let span = cell
            .value()
            .attr("colspan")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .unwrap_or(1)
            .clamp(1, MAX_COLSPAN);
        for _ in 0..span {
            cells.push(text.clone());
        }
    }
    cells
}

/// Rows of `table` itself, not of tables nested inside it.
fn raw_table(table: ElementRef) -> RawTable {
    let mut header = None;
    let mut rows = Vec::new();
    for child in element_children(table) {
        match child.value().name() {
            "tr" => rows.push(row_cells(child)),
            section @ ("thead" | "tbody" | "tfoot") => {
                for tr in element_children(child).filter(|c| c.value().name() == "tr") {
                    let cells = row_cells(tr);
                    if section == "thead" && header.is_none() {
                        header = Some(cells);
                    } else {
                        rows.push(cells);
                    }
                }
            }
            _ => {}
        }
    }
    rows.retain(|r| !r.is_empty());
    RawTable { header, rows }
}

/// Row counts (including header rows) of every table on the page.
pub fn table_row_counts(html: &str) -> Vec<usize> {
    let doc = Html::parse_document(html);
    doc.select(&sel("table"))
        .map(|t| {
            let r = raw_table(t);
            r.rows.len() + usize::from(r.header.is_some())
        })
        .collect()
}

/// Every table with at least one row. The header comes from `<thead>` when
/// present, otherwise from the first row; ragged rows are padded with nulls.
pub fn parse_html_tables(html: &str, source_url: &str) -> Vec<DataTable> {
    let doc = Html::parse_document(html);
    doc.select(&sel("table"))
        .filter_map(|t| {
            let RawTable { header, mut rows } = raw_table(t);
            let header = match header {
                Some(h) => h,
                None if !rows.is_empty() => rows.remove(0),
                None => return None,
            };
            Some(DataTable::from_text(
                header,
                rows,
                Provenance {
                    source_url: source_url.to_string(),
                    method: ExtractionMethod::HtmlTable,
                },
            ))
        })
        .collect()
}

fn input_kind(ty: &str) -> Option<FieldKind> {
    Some(match ty {
        "" | "text" | "search" | "email" | "number" | "tel" | "url" | "password" => FieldKind::Text,
        "hidden" => FieldKind::Hidden,
        "submit" | "image" => FieldKind::Submit,
        "checkbox" => FieldKind::Checkbox,
        "radio" => FieldKind::Radio,
        _ => return None,
    })
}

fn form_fields(form: ElementRef) -> Vec<FormField> {
    let mut fields: Vec<FormField> = Vec::new();
    for el in form.select(&sel("input, select, textarea, button")) {
        let e = el.value();
        let name = e.attr("name").unwrap_or("").trim().to_string();
        let value = e.attr("value").unwrap_or("").to_string();
        let field = match e.name() {
            "input" => {
                let ty = e.attr("type").unwrap_or("").trim().to_lowercase();
                let Some(kind) = input_kind(&ty) else {
                    continue;
                };
                let checked = e.attr("checked").is_some();
                match kind {
                    FieldKind::Radio | FieldKind::Checkbox => {
                        let value = if value.is_empty() { "on".to_string() } else { value };
                        if let Some(existing) = fields.iter_mut().find(|f| f.name == name && f.kind == kind) {
                            existing.options.push(value.clone());
                            if checked && existing.default.is_empty() {
                                existing.default = value;
                            }
                            continue;
                        }
                        FormField {
                            name,
                            kind,
                            options: vec![value.clone()],
                            default: if checked { value } else { String::new() },
                        }
                    }
                    _ => FormField {
                        name,
                        kind,
                        options: Vec::new(),
                        default: value,
                    },
                }
            }
            "button" => {
                let ty = e.attr("type").unwrap_or("submit").trim().to_lowercase();
                if ty != "submit" {
                    continue;
                }
                FormField {
                    name,
                    kind: FieldKind::Submit,
                    options: Vec::new(),
                    default: value,
                }
            }
            "textarea" => FormField {
                name,
                kind: FieldKind::Text,
                options: Vec::new(),
                default: el.text().collect::<String>().trim().to_string(),
            },
            _ => {
                let opts: Vec<(String, bool)> = el
                    .select(&sel("option"))
                    .map(|o| {
                        let v = o
                            .value()
                            .attr("value")
                            .map(str::to_string)
                            .unwrap_or_else(|| collapse(&o.text().collect::<String>()));
                        (v, o.value().attr("selected").is_some())
                    })
                    .collect();
                let default = opts
                    .iter()
                    .find(|(_, s)| *s)
                    .or(opts.first())
                    .map(|(v, _)| v.clone())
                    .unwrap_or_default();
                FormField {
                    name,
                    kind: FieldKind::Select,
                    options: opts.into_iter().map(|(v, _)| v).collect(),
                    default,
                }
            }
        };
        // field names stay unique; unnamed fields are never submitted, keep one
        if fields.iter().any(|f| f.name == field.name) {
            continue;
        }
        fields.push(field);
    }
    fields
}

/// One schema per form. A missing or empty action means the page itself;
/// a missing or unknown method means GET.
pub fn extract_forms(html: &str, page_url: &Url) -> Vec<FormSchema> {
    let doc = Html::parse_document(html);
    let base = document_base(&doc, page_url);
    doc.select(&sel("form"))
        .map(|form| {
            let action = form
                .value()
                .attr("action")
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .and_then(|a| base.join(a).ok())
                .unwrap_or_else(|| page_url.clone());
            let method = match form.value().attr("method").map(|m| m.trim().to_lowercase()) {
                Some(m) if m == "post" => FormMethod::Post,
                _ => FormMethod::Get,
            };
            FormSchema {
                action_url: action.to_string(),
                method,
                fields: form_fields(form),
            }
        })
        .collect()
}
