//! Declarative access schemas for known data sources.
//!
//! ```text
//! create process <name> at <url> access browser [postfix <text>]
//!   [accepts filter ( <name> <type> {, ...} )]
//!   returns table ( <name> <type> [primary key] {, ...} ) ;
//! ```
//!
//! Types are `string` and `int` (any case). An output column may instead be
//! typed with a concept label from the synonym table (`Symbol GeneSymbol`);
//! such a column holds strings and records the concept as its domain.

mod exec;
mod kb;

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub(crate) use exec::identifier;
pub use exec::{induce_pd, run_pd, PdRunError};
pub use kb::{kb_lookup, KbError, ProcessKB, SharedKb};

use crate::dsl::{Cursor, Diagnostic};
use crate::schema::SynonymTable;
use crate::text::parse_loose_url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdType {
    String,
    Int,
}

impl PdType {
    pub fn as_str(self) -> &'static str {
        match self {
            PdType::String => "string",
            PdType::Int => "int",
        }
    }

    fn parse(token: &str) -> Option<PdType> {
        if token.eq_ignore_ascii_case("string") {
            Some(PdType::String)
        } else if token.eq_ignore_ascii_case("int") {
            Some(PdType::Int)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Browser,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: PdType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: PdType,
    /// Concept label used in place of a type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default)]
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessDescription {
    pub name: String,
    pub url: String,
    pub access_mode: AccessMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postfix: Option<String>,
    pub filters: Vec<Filter>,
    pub output_columns: Vec<OutputColumn>,
}

impl ProcessDescription {
    pub fn column_names(&self) -> Vec<String> {
        self.output_columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn primary_key(&self) -> Option<&OutputColumn> {
        self.output_columns.iter().find(|c| c.primary_key)
    }
}

pub fn parse_pd(text: &str) -> Result<ProcessDescription, Diagnostic> {
    parse_pd_with(text, &SynonymTable::builtin())
}

pub fn parse_pd_with(text: &str, synonyms: &SynonymTable) -> Result<ProcessDescription, Diagnostic> {
    let mut c = Cursor::new(text);
    c.expect_keyword("create")?;
    c.expect_keyword("process")?;
    let (name, _) = c.ident("process name")?;
    c.expect_keyword("at")?;
    let (url, url_at) = c.word("url")?;
    if parse_loose_url(&url).is_none() {
        return Err(c.error_at(url_at, format!("`{url}` is not an http(s) URL"), &[]));
    }
    c.expect_keyword("access")?;
    if !c.eat_keyword("browser") {
        return Err(c.error(&["browser"]));
    }
    let postfix = if c.eat_keyword("postfix") {
        Some(c.word("postfix text")?.0)
    } else {
        None
    };

    let mut filters = Vec::new();
    let mut seen = HashSet::new();
    if c.eat_keyword("accepts") {
        c.expect_keyword("filter")?;
        c.expect_punct('(')?;
        loop {
            let (fname, at) = c.ident("filter name")?;
            let (ty_tok, ty_at) = c.ident("type")?;
            let ty = PdType::parse(&ty_tok)
                .ok_or_else(|| c.error_at(ty_at, format!("unknown filter type `{ty_tok}`"), &["String", "int"]))?;
            if !seen.insert(fname.to_lowercase()) {
                return Err(c.error_at(at, format!("duplicate filter `{fname}`"), &[]));
            }
            filters.push(Filter { name: fname, ty });
            if !c.eat_punct(',') {
                break;
            }
        }
        c.expect_punct(')')?;
    } else if !c.peek_keyword("returns") {
        let expected: &[&str] = if postfix.is_none() {
            &["postfix", "accepts", "returns"]
        } else {
            &["accepts", "returns"]
        };
        return Err(c.error(expected));
    }

    c.expect_keyword("returns")?;
    c.expect_keyword("table")?;
    c.expect_punct('(')?;
    let mut columns: Vec<OutputColumn> = Vec::new();
    let mut seen = HashSet::new();
    loop {
        let (cname, at) = c.ident("column name")?;
        let (ty_tok, ty_at) = c.ident("type")?;
        let (ty, domain) = match PdType::parse(&ty_tok) {
            Some(t) => (t, None),
            None => match synonyms.groups.iter().find(|g| g.concept.eq_ignore_ascii_case(&ty_tok)) {
                Some(g) => (PdType::String, Some(g.concept.clone())),
                None => {
                    return Err(c.error_at(ty_at, format!("unknown column type `{ty_tok}`"), &["string", "int", "concept label"]))
                }
            },
        };
        let primary_key = if c.eat_keyword("primary") {
            c.expect_keyword("key")?;
            true
        } else {
            false
        };
        if !seen.insert(cname.to_lowercase()) {
            return Err(c.error_at(at, format!("duplicate column `{cname}`"), &[]));
        }
        if primary_key && columns.iter().any(|c| c.primary_key) {
            return Err(c.error_at(at, format!("second primary key `{cname}`"), &[]));
        }
        columns.push(OutputColumn {
            name: cname,
            ty,
            domain,
            primary_key,
        });
        if !c.eat_punct(',') {
            break;
        }
    }
    if !c.eat_punct(')') {
        return Err(c.error(&["`,`", "`)`", "primary"]));
    }
    c.expect_punct(';')?;
    if !c.at_end() {
        return Err(c.error(&["end of input"]));
    }
    Ok(ProcessDescription {
        name,
        url,
        access_mode: AccessMode::Browser,
        postfix,
        filters,
        output_columns: columns,
    })
}

/// Canonical text: lowercase keywords and types, one clause per line.
pub fn render_pd(pd: &ProcessDescription) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "create process {}", pd.name);
    let _ = writeln!(out, "  at {}", pd.url);
    out.push_str("  access browser\n");
    if let Some(p) = &pd.postfix {
        let _ = writeln!(out, "  postfix {p}");
    }
    if !pd.filters.is_empty() {
        let filters: Vec<String> = pd.filters.iter().map(|f| format!("{} {}", f.name, f.ty.as_str())).collect();
        let _ = writeln!(out, "  accepts filter ( {} )", filters.join(", "));
    }
    out.push_str("  returns table (\n");
    let cols: Vec<String> = pd
        .output_columns
        .iter()
        .map(|c| {
            let ty = c.domain.as_deref().unwrap_or(c.ty.as_str());
            let pk = if c.primary_key { " primary key" } else { "" };
            format!("    {} {ty}{pk}", c.name)
        })
        .collect();
    out.push_str(&cols.join(",\n"));
    out.push_str("\n  );\n");
    out
}
