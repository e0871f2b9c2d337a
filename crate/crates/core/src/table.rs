//! The relational frame every wrapper and query produces.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Integer,
    Real,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::String => "string",
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    /// Which source (with-clause alias or URL) the column came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Self {
            name: name.into(),
            ty,
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Str(String),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Text form used for output, LIKE matching and join keys.
    pub fn render(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Int(i) => i.to_string(),
            Cell::Real(r) => r.to_string(),
            Cell::Str(s) => s.clone(),
        }
    }

    /// Parses `raw` under `ty`; blank text is null.
    pub fn parse_as(raw: &str, ty: ColumnType) -> Option<Cell> {
        let t = raw.trim();
        if t.is_empty() {
            return Some(Cell::Null);
        }
        match ty {
            ColumnType::String => Some(Cell::Str(t.to_string())),
            ColumnType::Integer => t.parse().ok().map(Cell::Int),
            ColumnType::Real => parse_finite(t).map(Cell::Real),
        }
    }

    fn fits(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Cell::Null, _)
                | (Cell::Int(_), ColumnType::Integer)
                | (Cell::Real(_), ColumnType::Real)
                | (Cell::Str(_), ColumnType::String)
        )
    }

    /// Total order: nulls first, numbers numerically, then strings.
    pub fn total_cmp(&self, other: &Cell) -> Ordering {
        fn rank(c: &Cell) -> u8 {
            match c {
                Cell::Null => 0,
                Cell::Int(_) | Cell::Real(_) => 1,
                Cell::Str(_) => 2,
            }
        }
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Str(a), Cell::Str(b)) => a.cmp(b),
            (a @ (Cell::Int(_) | Cell::Real(_)), b @ (Cell::Int(_) | Cell::Real(_))) => {
                a.as_f64().total_cmp(&b.as_f64())
            }
            _ => rank(self).cmp(&rank(other)),
        }
    }

    fn as_f64(&self) -> f64 {
        match self {
            Cell::Int(i) => *i as f64,
            Cell::Real(r) => *r,
            _ => f64::NAN,
        }
    }
}

fn parse_finite(t: &str) -> Option<f64> {
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// How a table came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    Downloadable,
    HtmlTable,
    Form,
    AssistantSynthesized,
    ProcessDescription,
    Query,
    InMemory,
}

impl ExtractionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExtractionMethod::Downloadable => "downloadable",
            ExtractionMethod::HtmlTable => "html_table",
            ExtractionMethod::Form => "form",
            ExtractionMethod::AssistantSynthesized => "assistant-synthesized",
            ExtractionMethod::ProcessDescription => "process_description",
            ExtractionMethod::Query => "query",
            ExtractionMethod::InMemory => "in_memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_url: String,
    pub method: ExtractionMethod,
}

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("row {row} has {got} cells, expected {expected}")]
    RowLength { row: usize, got: usize, expected: usize },
    #[error("row {row}, column `{column}`: value does not fit type {ty}")]
    CellType { row: usize, column: String, ty: ColumnType },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Provenance,
}

impl DataTable {
    /// Builds a typed table from raw text cells.
    ///
    /// Ragged rows are padded with nulls; rows wider than the header get
    /// generated `column_N` names. A column is integer when every non-blank
    /// cell parses as an integer, real when every one parses as a number,
    /// string otherwise.
    pub fn from_text(
        headers: Vec<String>,
        raw_rows: Vec<Vec<String>>,
        provenance: Provenance,
    ) -> DataTable {
        let width = raw_rows
            .iter()
            .map(Vec::len)
            .chain(std::iter::once(headers.len()))
            .max()
            .unwrap_or(0);
        let mut names = Vec::with_capacity(width);
        for i in 0..width {
            let base = headers
                .get(i)
                .map(|h| h.trim().to_string())
                .filter(|h| !h.is_empty())
                .unwrap_or_else(|| format!("column_{}", i + 1));
            let mut name = base.clone();
            let mut n = 2;
            while names.contains(&name) {
                name = format!("{base}_{n}");
                n += 1;
            }
            names.push(name);
        }
        fn cell(row: &[String], i: usize) -> &str {
            row.get(i).map(String::as_str).unwrap_or("")
        }
        let types: Vec<ColumnType> = (0..width)
            .map(|i| {
                let values: Vec<&str> = raw_rows
                    .iter()
                    .map(|r| cell(r, i).trim())
                    .filter(|v| !v.is_empty())
                    .collect();
                infer_type(&values)
            })
            .collect();
        let rows = raw_rows
            .iter()
            .map(|r| {
                (0..width)
                    .map(|i| Cell::parse_as(cell(r, i), types[i]).unwrap_or(Cell::Null))
                    .collect()
            })
            .collect();
        DataTable {
            columns: names
                .into_iter()
                .zip(types)
                .map(|(n, t)| Column::new(n, t))
                .collect(),
            rows,
            provenance,
        }
    }

    pub fn empty(columns: Vec<Column>, provenance: Provenance) -> DataTable {
        DataTable {
            columns,
            rows: Vec::new(),
            provenance,
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|p| p.name == c.name) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(TableError::RowLength {
                    row: r,
                    got: row.len(),
                    expected: self.columns.len(),
                });
            }
            for (cell, col) in row.iter().zip(&self.columns) {
                if !cell.fits(col.ty) {
                    return Err(TableError::CellType {
                        row: r,
                        column: col.name.clone(),
                        ty: col.ty,
                    });
                }
            }
        }
        Ok(())
    }

    /// Header line plus one line per row, separated by `delimiter`.
    pub fn to_delimited(&self, delimiter: u8) -> String {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(Vec::new());
        // writing into a Vec cannot fail
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    /// Rows as JSON objects keyed by column name.
    pub fn to_records(&self) -> serde_json::Value {
        let records = self
            .rows
            .iter()
            .map(|row| {
                let obj = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.name.clone(), serde_json::to_value(v).unwrap_or_default()))
                    .collect::<serde_json::Map<_, _>>();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(records)
    }
}

/// Integer if all values parse as integers, real if all parse as finite
/// numbers, string otherwise (including the all-blank case).
pub fn infer_type(values: &[&str]) -> ColumnType {
    if values.is_empty() {
        ColumnType::String
    } else if values.iter().all(|v| v.parse::<i64>().is_ok()) {
        ColumnType::Integer
    } else if values.iter().all(|v| parse_finite(v).is_some()) {
        ColumnType::Real
    } else {
        ColumnType::String
    }
}
