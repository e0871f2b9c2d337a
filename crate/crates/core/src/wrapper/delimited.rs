//! Delimited-text and JSON downloads.

use crate::table::{infer_type, ColumnType, DataTable, ExtractionMethod, Provenance};

const SNIFF_LINES: usize = 20;
const DELIMITERS: [u8; 3] = [b',', b'\t', b';'];

fn records(text: &str, delimiter: u8, limit: Option<usize>) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    reader
        .records()
        .filter_map(Result::ok)
        .map(|r| r.iter().map(|c| c.trim().to_string()).collect::<Vec<_>>())
        .filter(|r| r.iter().any(|c| !c.is_empty()))
        .take(limit.unwrap_or(usize::MAX))
        .collect()
}

/// The delimiter giving the largest column count that is consistent over
/// the first lines; comma wins ties. Falls back to comma.
pub fn sniff_delimiter(text: &str) -> u8 {
    let mut best: Option<(usize, u8)> = None;
    for d in DELIMITERS {
        let sample = records(text, d, Some(SNIFF_LINES));
        let Some(first) = sample.first() else {
            continue;
        };
        let width = first.len();
        if width >= 2 && sample.iter().all(|r| r.len() == width) && best.map_or(true, |(w, _)| width > w) {
            best = Some((width, d));
        }
    }
    best.map(|(_, d)| d).unwrap_or(b',')
}

fn is_stringish(cell: &str) -> bool {
    !cell.is_empty() && infer_type(&[cell]) == ColumnType::String
}

/// First row is a header when it is all text and some later row is not.
/// When every row is all text, it is a header when its cells are distinct
/// and none of them reappears in its own column.
pub fn has_header(rows: &[Vec<String>]) -> bool {
    let Some((first, rest)) = rows.split_first() else {
        return false;
    };
    if !first.iter().all(|c| is_stringish(c)) {
        return false;
    }
    if rest.iter().any(|r| r.iter().any(|c| !c.is_empty() && !is_stringish(c))) {
        return true;
    }
    let distinct = first.iter().enumerate().all(|(i, c)| !first[..i].contains(c));
    let repeated = rest
        .iter()
        .any(|r| r.iter().zip(first).any(|(c, h)| c.eq_ignore_ascii_case(h)));
    distinct && !repeated
}

pub fn parse_delimited(text: &str, source_url: &str, delimiter: Option<u8>) -> DataTable {
    let text = text.trim_start_matches('\u{feff}');
    let d = delimiter.unwrap_or_else(|| sniff_delimiter(text));
    let mut rows = records(text, d, None);
    let header = if has_header(&rows) { rows.remove(0) } else { Vec::new() };
    DataTable::from_text(
        header,
        rows,
        Provenance {
            source_url: source_url.to_string(),
            method: ExtractionMethod::Downloadable,
        },
    )
}

fn json_cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// An array of objects (keys in first-seen order become columns) or an
/// array of arrays (first is the header). Anything else is `None`.
pub fn parse_json_table(text: &str, source_url: &str) -> Option<DataTable> {
    let value: serde_json::Value = serde_json::from_str(text.trim_start_matches('\u{feff}')).ok()?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        serde_json::Value::Object(mut o) => match o.remove("data").or_else(|| o.remove("results")) {
            Some(serde_json::Value::Array(items)) => items,
            _ => return None,
        },
        _ => return None,
    };
    let provenance = Provenance {
        source_url: source_url.to_string(),
        method: ExtractionMethod::Downloadable,
    };
    if items.iter().all(|i| i.is_object()) {
        let mut columns: Vec<String> = Vec::new();
        for item in &items {
            for k in item.as_object().into_iter().flat_map(|o| o.keys()) {
                if !columns.contains(k) {
                    columns.push(k.clone());
                }
            }
        }
        let rows = items
            .iter()
            .map(|i| columns.iter().map(|c| i.get(c).map(json_cell).unwrap_or_default()).collect())
            .collect();
        (!columns.is_empty()).then(|| DataTable::from_text(columns, rows, provenance))
    } else if items.iter().all(|i| i.is_array()) {
        let mut rows: Vec<Vec<String>> = items
            .iter()
            .map(|i| i.as_array().into_iter().flatten().map(json_cell).collect())
            .collect();
        if rows.is_empty() {
            return None;
        }
        let header = rows.remove(0);
        Some(DataTable::from_text(header, rows, provenance))
    } else {
        None
    }
}
