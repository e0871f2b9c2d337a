//! Join, filter and projection over materialized with-clause tables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BioFlowQuery, Literal, Op, Predicate, Registry, Select, TableSource, WithClause};
use crate::schema::{resolve_column, schema_match, SynonymTable};
use crate::table::{Cell, Column, ColumnType, DataTable, ExtractionMethod, Provenance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecError {
    #[error("unknown {role} `{name}`")]
    UnknownFunction { role: String, name: String },
    #[error("`{alias}`: attribute `{attribute}` not found among {columns:?}")]
    AttributeNotFound {
        alias: String,
        attribute: String,
        columns: Vec<String>,
    },
    #[error("no join path between {left:?} and `{right}`")]
    NoJoinPath { left: Vec<String>, right: String },
    #[error("unknown column `{column}`")]
    UnknownColumn { column: String },
    #[error("literal {literal} does not fit {ty} column `{column}`")]
    LiteralType { column: String, literal: String, ty: ColumnType },
    #[error("source `{alias}` failed ({error}); it provides selected column `{column}`")]
    SourceFailed { alias: String, column: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFailure {
    pub alias: String,
    pub url: String,
    pub error_class: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub table: DataTable,
    /// Sources that failed without taking a selected column down with them.
    pub failures: Vec<SourceFailure>,
    /// Rows each surviving clause contributed, in clause order.
    pub clause_rows: Vec<(String, usize)>,
    /// Index of the predicate submitted to the sources as their binding.
    pub pushed_down: Option<usize>,
    /// Whether a source applied the binding itself (so the predicate was
    /// not evaluated again after the join).
    pub binding_consumed: bool,
}

/// The first `=` predicate on a column some clause extracts.
fn binding_predicate(q: &BioFlowQuery, synonyms: &SynonymTable) -> Option<usize> {
    q.predicates.iter().position(|p| {
        p.op == Op::Eq
            && q.with_clauses
                .iter()
                .any(|w| w.extract.attributes.iter().any(|a| synonyms.equivalent(a, &p.column)))
    })
}

/// Renames each extract attribute's matching column to the attribute and
/// tags every column with the clause alias.
fn prepare(clause: &WithClause, mut table: DataTable, synonyms: &SynonymTable) -> Result<DataTable, ExecError> {
    let names = table.column_names();
    let mut renamed: Vec<Option<String>> = vec![None; names.len()];
    for attr in &clause.extract.attributes {
        let i = resolve_column(attr, &names, synonyms)
            .filter(|&i| renamed[i].is_none())
            .ok_or_else(|| ExecError::AttributeNotFound {
                alias: clause.alias.clone(),
                attribute: attr.clone(),
                columns: names.clone(),
            })?;
        renamed[i] = Some(attr.clone());
    }
    for (col, new) in table.columns.iter_mut().zip(renamed) {
        if let Some(n) = new {
            col.name = n;
        }
        col.source = Some(clause.alias.clone());
    }
    dedupe_names(&mut table.columns);
    Ok(table)
}

fn dedupe_names(columns: &mut [Column]) {
    for i in 1..columns.len() {
        if columns[..i].iter().any(|c| c.name == columns[i].name) {
            let base = format!("{}_{}", columns[i].name, columns[i].source.as_deref().unwrap_or("dup"));
            let mut name = base.clone();
            let mut n = 2;
            while columns.iter().any(|c| c.name == name) {
                name = format!("{base}{n}");
                n += 1;
            }
            columns[i].name = name;
        }
    }
}

fn key_of(row: &[Cell], cols: &[usize]) -> Option<Vec<String>> {
    cols.iter()
        .map(|&i| match &row[i] {
            Cell::Null => None,
            c => Some(c.render()),
        })
        .collect()
}

/// Inner equi-join on every schema-matched column pair. The right side's
/// matched columns are dropped. Rows are ordered by the join key, then by
/// left row, then by right row.
pub(crate) fn join(
    left: &DataTable,
    right: &DataTable,
    right_alias: &str,
    synonyms: &SynonymTable,
) -> Result<DataTable, ExecError> {
    let mapping = schema_match(&left.column_names(), &right.column_names(), synonyms);
    if mapping.pairs.is_empty() {
        let mut left_sources: Vec<String> = left.columns.iter().filter_map(|c| c.source.clone()).collect();
        left_sources.dedup();
        return Err(ExecError::NoJoinPath {
            left: left_sources,
            right: right_alias.to_string(),
        });
    }
    let lk: Vec<usize> = mapping.pairs.iter().map(|p| p.0).collect();
    let rk: Vec<usize> = mapping.pairs.iter().map(|p| p.1).collect();
    let keep: Vec<usize> = (0..right.width()).filter(|j| !rk.contains(j)).collect();

    let mut index: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
    for (j, row) in right.rows.iter().enumerate() {
        if let Some(k) = key_of(row, &rk) {
            index.entry(k).or_default().push(j);
        }
    }
    let mut matches: Vec<(usize, usize)> = Vec::new();
    for (i, row) in left.rows.iter().enumerate() {
        if let Some(k) = key_of(row, &lk) {
            for &j in index.get(&k).into_iter().flatten() {
                matches.push((i, j));
            }
        }
    }
    matches.sort_by(|&(i1, j1), &(i2, j2)| {
        lk.iter()
            .map(|&c| left.rows[i1][c].total_cmp(&left.rows[i2][c]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i1.cmp(&i2))
            .then(j1.cmp(&j2))
    });

    let mut columns = left.columns.clone();
    columns.extend(keep.iter().map(|&j| right.columns[j].clone()));
    dedupe_names(&mut columns);
    let rows = matches
        .into_iter()
        .map(|(i, j)| {
            let mut row = left.rows[i].clone();
            row.extend(keep.iter().map(|&k| right.rows[j][k].clone()));
            row
        })
        .collect();
    Ok(DataTable {
        columns,
        rows,
        provenance: left.provenance.clone(),
    })
}

enum Test {
    Int(i64),
    Real(f64),
    Text(String),
    Like(String),
}

fn compile_predicate(p: &Predicate, table: &DataTable, synonyms: &SynonymTable) -> Result<(usize, Test), ExecError> {
    let idx = resolve_column(&p.column, &table.column_names(), synonyms).ok_or_else(|| ExecError::UnknownColumn {
        column: p.column.clone(),
    })?;
    let ty = table.columns[idx].ty;
    let bad = || ExecError::LiteralType {
        column: p.column.clone(),
        literal: p.literal.to_string(),
        ty,
    };
    let test = match (p.op, ty) {
        (Op::Like, _) => Test::Like(p.literal.text().to_lowercase()),
        (Op::Eq, ColumnType::Integer) => Test::Int(p.literal.text().trim().parse().map_err(|_| bad())?),
        (Op::Eq, ColumnType::Real) => Test::Real(p.literal.text().trim().parse().map_err(|_| bad())?),
        (Op::Eq, ColumnType::String) => match &p.literal {
            Literal::Str(s) | Literal::Num(s) => Test::Text(s.clone()),
        },
    };
    Ok((idx, test))
}

fn passes(cell: &Cell, test: &Test) -> bool {
    match (test, cell) {
        (_, Cell::Null) => false,
        (Test::Int(v), Cell::Int(c)) => c == v,
        (Test::Int(v), Cell::Real(c)) => *c == *v as f64,
        (Test::Real(v), Cell::Real(c)) => c == v,
        (Test::Real(v), Cell::Int(c)) => *c as f64 == *v,
        (Test::Text(v), c) => c.render() == *v,
        (Test::Like(v), c) => c.render().to_lowercase().contains(v.as_str()),
        _ => false,
    }
}

/// Keeps the rows satisfying every predicate.
pub(crate) fn filter(table: &mut DataTable, preds: &[&Predicate], synonyms: &SynonymTable) -> Result<(), ExecError> {
    let tests = preds
        .iter()
        .map(|p| compile_predicate(p, table, synonyms))
        .collect::<Result<Vec<_>, _>>()?;
    table.rows.retain(|row| tests.iter().all(|(i, t)| passes(&row[*i], t)));
    Ok(())
}

pub(crate) fn project(table: DataTable, select: &Select, synonyms: &SynonymTable) -> Result<DataTable, ExecError> {
    let Select::Columns(cols) = select else {
        return Ok(table);
    };
    let names = table.column_names();
    let idx = cols
        .iter()
        .map(|c| resolve_column(c, &names, synonyms).ok_or_else(|| ExecError::UnknownColumn { column: c.clone() }))
        .collect::<Result<Vec<_>, _>>()?;
    let columns = idx
        .iter()
        .zip(cols)
        .map(|(&i, name)| Column {
            name: name.clone(),
            ..table.columns[i].clone()
        })
        .collect();
    let rows = table.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
    Ok(DataTable {
        columns,
        rows,
        provenance: table.provenance,
    })
}

/// Materializes every clause (concurrently), then joins, filters and
/// projects. A failed source is reported and skipped unless a selected
/// column can only come from it.
pub fn execute(
    q: &BioFlowQuery,
    source: &dyn TableSource,
    registry: &Registry,
    synonyms: &SynonymTable,
) -> Result<Execution, ExecError> {
    registry.check(q)?;
    let pushed_down = binding_predicate(q, synonyms);
    let binding = pushed_down.map(|i| q.predicates[i].literal.text().to_string());

    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = q
            .with_clauses
            .iter()
            .map(|w| s.spawn(|| source.materialize(w, binding.as_deref())))
            .collect();
        handles.into_iter().map(|h| h.join().expect("materialization panicked")).collect()
    });

    let mut tables: Vec<(&WithClause, DataTable)> = Vec::new();
    let mut failures = Vec::new();
    let mut consumed = false;
    for (w, r) in q.with_clauses.iter().zip(results) {
        match r {
            Ok(m) => {
                consumed |= m.consumed_binding;
                tables.push((w, prepare(w, m.table, synonyms)?));
            }
            Err(e) => failures.push(SourceFailure {
                alias: w.alias.clone(),
                url: w.extract.source_url.clone(),
                error_class: e.class,
                error: e.message,
            }),
        }
    }

    for f in &failures {
        let failed = q.with_clauses.iter().find(|w| w.alias == f.alias).expect("failure names a clause");
        let lost = match &q.select {
            Select::All => failed.extract.attributes.first().cloned(),
            Select::Columns(cols) => cols
                .iter()
                .find(|c| {
                    failed.extract.attributes.iter().any(|a| synonyms.equivalent(a, c))
                        && !tables
                            .iter()
                            .any(|(_, t)| resolve_column(c, &t.column_names(), synonyms).is_some())
                })
                .cloned(),
        };
        if let Some(column) = lost.or_else(|| tables.is_empty().then(|| f.alias.clone())) {
            return Err(ExecError::SourceFailed {
                alias: f.alias.clone(),
                column,
                error: format!("{}: {}", f.error_class, f.error),
            });
        }
    }

    let clause_rows = tables.iter().map(|(w, t)| (w.alias.clone(), t.rows.len())).collect();
    let urls: Vec<&str> = tables.iter().map(|(w, _)| w.extract.source_url.as_str()).collect();
    let provenance = Provenance {
        source_url: urls.join(" "),
        method: ExtractionMethod::Query,
    };
    let mut iter = tables.into_iter();
    let (_, mut acc) = iter.next().expect("at least one table survives");
    for (w, t) in iter {
        acc = join(&acc, &t, &w.alias, synonyms)?;
    }
    acc.provenance = provenance;

    let preds: Vec<&Predicate> = q
        .predicates
        .iter()
        .enumerate()
        .filter(|(i, _)| !(consumed && Some(*i) == pushed_down))
        .map(|(_, p)| p)
        .collect();
    filter(&mut acc, &preds, synonyms)?;
    if consumed {
        // still type-check the consumed predicate against the result
        if let Some(i) = pushed_down {
            compile_predicate(&q.predicates[i], &acc, synonyms)?;
        }
    }
    let table = project(acc, &q.select, synonyms)?;
    Ok(Execution {
        table,
        failures,
        clause_rows,
        pushed_down,
        binding_consumed: consumed,
    })
}
