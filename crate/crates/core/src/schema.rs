//! Column-name matching across heterogeneous source schemas.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::normalize_name;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymGroup {
    /// Canonical concept name, also usable as a column type label.
    pub concept: String,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymTable {
    pub groups: Vec<SynonymGroup>,
}

impl Default for SynonymTable {
    fn default() -> Self {
        Self::builtin()
    }
}

fn group(concept: &str, names: &[&str]) -> SynonymGroup {
    SynonymGroup {
        concept: concept.to_string(),
        names: names.iter().map(|s| s.to_string()).collect(),
    }
}

impl SynonymTable {
    pub fn builtin() -> Self {
        Self {
            groups: vec![
                group("GeneSymbol", &["Gene Names", "Gene Name", "Symbol", "Gene Symbol", "Gene"]),
                group("ProteinID", &["Entry", "Accession", "UniProt ID", "Protein ID"]),
                group("InfertilityData", &["Disease", "Infertility", "Infertility Phenotype"]),
            ],
        }
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Index of the group a name belongs to (by its concept or any synonym).
    fn group_of(&self, name: &str) -> Option<usize> {
        let key = normalize_name(name);
        if key.is_empty() {
            return None;
        }
        self.groups.iter().position(|g| {
            normalize_name(&g.concept) == key || g.names.iter().any(|n| normalize_name(n) == key)
        })
    }

    /// The canonical concept for a column name, if it has one.
    pub fn concept_of(&self, name: &str) -> Option<&str> {
        self.group_of(name).map(|i| self.groups[i].concept.as_str())
    }

    /// Whether `label` is the canonical name of a concept (exact, case-insensitive).
    pub fn is_concept(&self, label: &str) -> bool {
        self.groups.iter().any(|g| g.concept.eq_ignore_ascii_case(label))
    }

    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        let na = normalize_name(a);
        (!na.is_empty() && na == normalize_name(b))
            || matches!((self.group_of(a), self.group_of(b)), (Some(x), Some(y)) if x == y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMapping {
    /// `(index in a, index in b)`, in order of `a`.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

/// Pairs columns by normalized exact name first, then by shared synonym
/// group. Each column is used at most once.
pub fn schema_match(cols_a: &[String], cols_b: &[String], synonyms: &SynonymTable) -> SchemaMapping {
    let mut b_used = vec![false; cols_b.len()];
    let mut a_match: Vec<Option<usize>> = vec![None; cols_a.len()];
    let norm_b: Vec<String> = cols_b.iter().map(|c| normalize_name(c)).collect();
    for (i, a) in cols_a.iter().enumerate() {
        let na = normalize_name(a);
        if na.is_empty() {
            continue;
        }
        if let Some(j) = (0..cols_b.len()).find(|&j| !b_used[j] && norm_b[j] == na) {
            b_used[j] = true;
            a_match[i] = Some(j);
        }
    }
    let group_b: Vec<Option<usize>> = cols_b.iter().map(|c| synonyms.group_of(c)).collect();
    for (i, a) in cols_a.iter().enumerate() {
        if a_match[i].is_some() {
            continue;
        }
        let Some(g) = synonyms.group_of(a) else {
            continue;
        };
        if let Some(j) = (0..cols_b.len()).find(|&j| !b_used[j] && group_b[j] == Some(g)) {
            b_used[j] = true;
            a_match[i] = Some(j);
        }
    }
    SchemaMapping {
        pairs: a_match.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j))).collect(),
        unmatched_a: a_match.iter().enumerate().filter(|(_, m)| m.is_none()).map(|(i, _)| i).collect(),
        unmatched_b: b_used.iter().enumerate().filter(|(_, u)| !**u).map(|(j, _)| j).collect(),
    }
}

/// Index of the column in `cols` that `name` resolves to.
pub fn resolve_column(name: &str, cols: &[String], synonyms: &SynonymTable) -> Option<usize> {
    let key = normalize_name(name);
    cols.iter()
        .position(|c| normalize_name(c) == key)
        .or_else(|| cols.iter().position(|c| synonyms.equivalent(name, c)))
}
