//! Running a stored description, and deriving one from a wrapped table.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::{AccessMode, Filter, OutputColumn, PdType, ProcessDescription};
use crate::schema::{schema_match, SynonymTable};
use crate::table::{Cell, Column, ColumnType, DataTable, ExtractionMethod, Provenance};
use crate::text::normalize_name;
use crate::wrapper::{
    execute_form, extract_forms, fetch_page, response_tables, FieldKind, FormFill, FormSchema, WrapContext, WrapError,
};

#[derive(Debug, Error)]
pub enum PdRunError {
    #[error(transparent)]
    Wrap(#[from] WrapError),
    #[error("process `{name}`: no table at {url} matches its output columns")]
    NoTable { name: String, url: String },
}

impl PdRunError {
    pub fn class(&self) -> &'static str {
        match self {
            PdRunError::Wrap(e) => e.class(),
            PdRunError::NoTable { .. } => "no_table",
        }
    }
}

/// The form and field to put the search term in: a field named like one of
/// the filters, else the only text field of a form.
fn choose_form(forms: &[FormSchema], pd: &ProcessDescription) -> Option<(usize, String)> {
    let filters: HashSet<String> = pd.filters.iter().map(|f| normalize_name(&f.name)).collect();
    let by_filter = forms.iter().enumerate().find_map(|(i, form)| {
        form.fields
            .iter()
            .find(|f| f.kind == FieldKind::Text && filters.contains(&normalize_name(&f.name)))
            .map(|f| (i, f.name.clone()))
    });
    by_filter.or_else(|| {
        forms.iter().enumerate().find_map(|(i, form)| {
            let mut text = form.fields.iter().filter(|f| f.kind == FieldKind::Text);
            match (text.next(), text.next()) {
                (Some(f), None) => Some((i, f.name.clone())),
                _ => None,
            }
        })
    })
}

fn convert(cell: &Cell, ty: PdType) -> Cell {
    match (ty, cell) {
        (_, Cell::Null) => Cell::Null,
        (PdType::Int, Cell::Int(_)) => cell.clone(),
        (PdType::Int, other) => other.render().trim().parse().map(Cell::Int).unwrap_or(Cell::Null),
        (PdType::String, other) => Cell::Str(other.render()),
    }
}

/// Fetches the description's page, submits `term` through its search form
/// (when it has one) and returns the result table aligned to the declared
/// output columns. Declared columns the page lacks come back null.
pub fn run_pd(
    pd: &ProcessDescription,
    term: &str,
    ctx: &WrapContext,
    synonyms: &SynonymTable,
) -> Result<DataTable, PdRunError> {
    let page = fetch_page(ctx.fetcher, &pd.url)?;
    let forms = if page.is_html() {
        extract_forms(&page.text(), &page.final_url)
    } else {
        Vec::new()
    };
    let response = match choose_form(&forms, pd) {
        Some((i, field)) => {
            let fill = FormFill {
                target_form: i,
                assignments: BTreeMap::from([(field, term.to_string())]),
            };
            execute_form(&fill, &forms[i], ctx.fetcher)?
        }
        None => page,
    };
    let url = response.final_url.to_string();
    let wanted = pd.column_names();
    let mut best: Option<(usize, DataTable)> = None;
    for t in response_tables(&response)? {
        let n = schema_match(&wanted, &t.column_names(), synonyms).pairs.len();
        if n > 0 && best.as_ref().map_or(true, |(b, _)| n > *b) {
            best = Some((n, t));
        }
    }
    let Some((_, table)) = best else {
        return Err(PdRunError::NoTable {
            name: pd.name.clone(),
            url,
        });
    };
    let mapping = schema_match(&wanted, &table.column_names(), synonyms);
    let source: Vec<Option<usize>> = (0..wanted.len())
        .map(|i| mapping.pairs.iter().find(|(a, _)| *a == i).map(|(_, b)| *b))
        .collect();
    let rows = table
        .rows
        .iter()
        .map(|row| {
            pd.output_columns
                .iter()
                .zip(&source)
                .map(|(col, src)| src.map_or(Cell::Null, |j| convert(&row[j], col.ty)))
                .collect()
        })
        .collect();
    let columns = pd
        .output_columns
        .iter()
        .map(|c| {
            Column::new(
                c.name.clone(),
                match c.ty {
                    PdType::Int => ColumnType::Integer,
                    PdType::String => ColumnType::String,
                },
            )
        })
        .collect();
    Ok(DataTable {
        columns,
        rows,
        provenance: Provenance {
            source_url: url,
            method: ExtractionMethod::ProcessDescription,
        },
    })
}

/// `Gene Names` → `GeneNames`; never empty, never starts with a digit.
pub(crate) fn identifier(raw: &str) -> String {
    let mut out = String::new();
    for word in raw.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let mut chars = word.chars();
        if let Some(first) = chars.next() {
            out.extend(first.to_uppercase());
            out.push_str(chars.as_str());
        }
    }
    if out.is_empty() {
        out.push_str("Column");
    }
    if out.starts_with(|c: char| c.is_numeric()) {
        out.insert(0, 'C');
    }
    out
}

/// Description of how a table was obtained: browser access at `url`, the
/// table's columns as output (integer columns as `int`, everything else as
/// `string`), and the first column that is non-null and unique over the
/// observed rows as primary key.
pub fn induce_pd(name: &str, url: &str, filter: Option<&str>, table: &DataTable) -> ProcessDescription {
    let mut used = HashSet::new();
    let mut output_columns: Vec<OutputColumn> = table
        .columns
        .iter()
        .map(|c| {
            let base = identifier(&c.name);
            let mut name = base.clone();
            let mut n = 2;
            while !used.insert(name.to_lowercase()) {
                name = format!("{base}{n}");
                n += 1;
            }
            OutputColumn {
                name,
                ty: if c.ty == ColumnType::Integer { PdType::Int } else { PdType::String },
                domain: None,
                primary_key: false,
            }
        })
        .collect();
    if !table.rows.is_empty() {
        let unique = (0..table.width()).find(|&i| {
            let mut seen = HashSet::new();
            table.rows.iter().all(|r| !r[i].is_null() && seen.insert(r[i].render()))
        });
        if let Some(i) = unique {
            output_columns[i].primary_key = true;
        }
    }
    ProcessDescription {
        name: identifier(name),
        url: url.to_string(),
        access_mode: AccessMode::Browser,
        postfix: None,
        filters: filter
            .map(|f| Filter {
                name: identifier(f),
                ty: PdType::String,
            })
            .into_iter()
            .collect(),
        output_columns,
    }
}
