//! Building an integration query from identified resources.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BioFlowQuery, ExecError, ExtractClause, Literal, Op, Predicate, Select, WithClause};
use crate::process::{kb_lookup, ProcessKB};
use crate::resources::ResourceDescriptor;
use crate::schema::SynonymTable;
use crate::text::normalize_name;

pub const DEFAULT_MATCHER: &str = "S-match";
pub const DEFAULT_FILLER: &str = "form-fill";
pub const DEFAULT_WRAPPER: &str = "Web-Prospector";

/// Named matcher, filler and wrapper functions an extract clause may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub matchers: Vec<String>,
    pub fillers: Vec<String>,
    pub wrappers: Vec<String>,
}

impl Default for Registry {
    fn default() -> Self {
        Self {
            matchers: vec![DEFAULT_MATCHER.into()],
            fillers: vec![DEFAULT_FILLER.into()],
            wrappers: vec![DEFAULT_WRAPPER.into()],
        }
    }
}

impl Registry {
    pub fn check(&self, q: &BioFlowQuery) -> Result<(), ExecError> {
        for w in &q.with_clauses {
            let e = &w.extract;
            for (role, name, known) in [
                ("matcher", &e.matcher, &self.matchers),
                ("filler", &e.filler, &self.fillers),
                ("wrapper", &e.wrapper, &self.wrappers),
            ] {
                if let Some(n) = name {
                    if !known.iter().any(|k| k.eq_ignore_ascii_case(n)) {
                        return Err(ExecError::UnknownFunction {
                            role: role.into(),
                            name: n.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompileError {
    #[error("no resources to compile")]
    NoResources,
    #[error("resource `{resource}`: no resolvable attributes ({reason})")]
    NoAttributes { resource: String, reason: String },
}

/// Alias for a source: the parenthesized acronym in its name when there is
/// one (`Male Infertility Knowledgebase (MiKDB)` → `mikdb`), else its first
/// word, lowercased.
pub fn source_alias(name: &str) -> String {
    let acronym = name
        .rfind('(')
        .and_then(|open| name[open + 1..].find(')').map(|close| &name[open + 1..open + 1 + close]))
        .map(normalize_name)
        .filter(|a| !a.is_empty());
    let alias = acronym.unwrap_or_else(|| {
        name.split_whitespace()
            .map(normalize_name)
            .find(|w| !w.is_empty())
            .unwrap_or_default()
    });
    let alias = if alias.is_empty() { "source".to_string() } else { alias };
    if alias.starts_with(|c: char| c.is_numeric()) {
        format!("s{alias}")
    } else {
        alias
    }
}

/// One with-clause per resource, in the given order.
///
/// Columns come from the resource's stored process description, or from
/// `discover` when there is none. Each clause extracts the synonym-table
/// concepts its columns cover, leaving out concepts an earlier clause
/// already extracts (they become join columns); a source without known
/// concepts extracts all its columns. The where clause equates the first
/// concept shared by two sources (else the first attribute) with `term`.
pub fn compile_plan(
    term: &str,
    resources: &[ResourceDescriptor],
    kb: &ProcessKB,
    synonyms: &SynonymTable,
    discover: &dyn Fn(&ResourceDescriptor) -> Result<Vec<String>, String>,
) -> Result<BioFlowQuery, CompileError> {
    if resources.is_empty() {
        return Err(CompileError::NoResources);
    }
    let mut clauses: Vec<WithClause> = Vec::new();
    let mut concept_sets: Vec<Vec<String>> = Vec::new();
    for r in resources {
        let columns = match kb_lookup(kb, &r.data_link) {
            Some(pd) => pd.column_names(),
            None => discover(r).map_err(|reason| CompileError::NoAttributes {
                resource: r.source_name.clone(),
                reason,
            })?,
        };
        if columns.is_empty() {
            return Err(CompileError::NoAttributes {
                resource: r.source_name.clone(),
                reason: "no columns".into(),
            });
        }
        let concepts: Vec<String> = synonyms
            .groups
            .iter()
            .filter(|g| columns.iter().any(|c| synonyms.concept_of(c) == Some(g.concept.as_str())))
            .map(|g| g.concept.clone())
            .collect();
        let attributes: Vec<String> = if concepts.is_empty() {
            let mut out: Vec<String> = Vec::new();
            for c in &columns {
                let id = crate::process::identifier(c);
                if !out.iter().any(|o| normalize_name(o) == normalize_name(&id)) {
                    out.push(id);
                }
            }
            out
        } else {
            let fresh: Vec<String> = concepts
                .iter()
                .filter(|c| !concept_sets.iter().flatten().any(|e| e == *c))
                .cloned()
                .collect();
            if fresh.is_empty() {
                concepts.clone()
            } else {
                fresh
            }
        };
        concept_sets.push(concepts);

        let mut alias = source_alias(&r.source_name);
        let base = alias.clone();
        let mut n = 2;
        while clauses.iter().any(|w| w.alias.eq_ignore_ascii_case(&alias)) {
            alias = format!("{base}{n}");
            n += 1;
        }
        clauses.push(WithClause {
            extract: ExtractClause {
                attributes,
                matcher: Some(DEFAULT_MATCHER.into()),
                filler: None,
                wrapper: Some(DEFAULT_WRAPPER.into()),
                source_url: r.data_link.trim().to_string(),
                submit: alias.clone(),
            },
            alias,
        });
    }

    let mut select: Vec<String> = Vec::new();
    for w in &clauses {
        for a in &w.extract.attributes {
            if !select.iter().any(|s| synonyms.equivalent(s, a)) {
                select.push(a.clone());
            }
        }
    }
    let shared = synonyms
        .groups
        .iter()
        .map(|g| &g.concept)
        .find(|c| concept_sets.iter().filter(|s| s.contains(c)).count() >= 2);
    let key = shared.cloned().unwrap_or_else(|| clauses[0].extract.attributes[0].clone());
    Ok(BioFlowQuery {
        select: Select::Columns(select),
        with_clauses: clauses,
        predicates: vec![Predicate {
            column: key,
            op: Op::Eq,
            literal: Literal::Str(term.to_string()),
        }],
    })
}
