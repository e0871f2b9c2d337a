//! Extract/select integration queries over wrapped sources.
//!
//! ```text
//! select <col> {, <col>} | *
//! from ( with <alias> as (
//!          extract <attr> {, <attr>}
//!          [using {matcher <name> | filler <name> | wrapper <name>}]
//!          from <url>
//!          submit <binding> )
//!        {, <alias> as ( ... )} )
//! [where <col> (= | like) <literal> {and ...}] [;]
//! ```
//!
//! Each with-clause materializes one table through a [`TableSource`]. The
//! tables are joined left to right on schema-matched columns, filtered by the
//! where predicates and projected onto the select list.

mod exec;
mod plan;
mod source;

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

pub use crate::schema::{resolve_column, schema_match, SchemaMapping, SynonymGroup, SynonymTable};
pub use exec::{execute, ExecError, Execution, SourceFailure};
pub use plan::{compile_plan, source_alias, CompileError, Registry, DEFAULT_FILLER, DEFAULT_MATCHER, DEFAULT_WRAPPER};
pub use source::{LiveSource, Materialized, MemorySource, SourceError, TableSource};

use crate::dsl::{quote, Cursor, Diagnostic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Select {
    All,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractClause {
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrapper: Option<String>,
    pub source_url: String,
    pub submit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithClause {
    pub alias: String,
    pub extract: ExtractClause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Eq,
    Like,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Literal {
    Str(String),
    /// Kept as written.
    Num(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => f.write_str(&quote(s)),
            Literal::Num(n) => f.write_str(n),
        }
    }
}

impl Literal {
    pub fn text(&self) -> &str {
        match self {
            Literal::Str(s) | Literal::Num(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: Op,
    pub literal: Literal,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            Op::Eq => "=",
            Op::Like => "like",
        };
        write!(f, "{} {op} {}", self.column, self.literal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioFlowQuery {
    pub select: Select,
    pub with_clauses: Vec<WithClause>,
    #[serde(default)]
    pub predicates: Vec<Predicate>,
}

fn ident_list(c: &mut Cursor, what: &str) -> Result<Vec<String>, Diagnostic> {
    let mut out = vec![c.ident(what)?.0];
    while c.eat_punct(',') {
        out.push(c.ident(what)?.0);
    }
    Ok(out)
}

fn parse_extract(c: &mut Cursor) -> Result<ExtractClause, Diagnostic> {
    c.expect_keyword("extract")?;
    let attributes = ident_list(c, "attribute")?;
    let (mut matcher, mut filler, mut wrapper) = (None, None, None);
    if c.eat_keyword("using") {
        let mut any = false;
        loop {
            let at = c.offset();
            let slot = if c.eat_keyword("matcher") {
                &mut matcher
            } else if c.eat_keyword("filler") {
                &mut filler
            } else if c.eat_keyword("wrapper") {
                &mut wrapper
            } else if any {
                break;
            } else {
                return Err(c.error(&["matcher", "filler", "wrapper"]));
            };
            if slot.is_some() {
                c.skip_ws();
                return Err(c.error_at(at, "function kind given twice", &[]));
            }
            *slot = Some(c.ident("function name")?.0);
            any = true;
        }
    }
    c.expect_keyword("from")?;
    let (source_url, _) = c.word("source url")?;
    c.expect_keyword("submit")?;
    let (submit, _) = c.ident("binding name")?;
    Ok(ExtractClause {
        attributes,
        matcher,
        filler,
        wrapper,
        source_url,
        submit,
    })
}

fn parse_predicate(c: &mut Cursor) -> Result<Predicate, Diagnostic> {
    let (column, _) = c.ident("column")?;
    let op = if c.eat_punct('=') {
        Op::Eq
    } else if c.eat_keyword("like") {
        Op::Like
    } else {
        return Err(c.error(&["`=`", "like"]));
    };
    let literal = if let Some(s) = c.string_literal()? {
        Literal::Str(s)
    } else if let Some(n) = c.number() {
        Literal::Num(n)
    } else {
        return Err(c.error(&["string literal", "number"]));
    };
    Ok(Predicate { column, op, literal })
}

pub fn parse_bioflow(text: &str) -> Result<BioFlowQuery, Diagnostic> {
    let mut c = Cursor::new(text);
    c.expect_keyword("select")?;
    let select = if c.eat_punct('*') {
        Select::All
    } else {
        Select::Columns(ident_list(&mut c, "column")?)
    };
    c.expect_keyword("from")?;
    c.expect_punct('(')?;
    c.expect_keyword("with")?;
    let mut with_clauses = Vec::new();
    let mut aliases = HashSet::new();
    loop {
        let (alias, at) = c.ident("alias")?;
        if !aliases.insert(alias.to_lowercase()) {
            return Err(c.error_at(at, format!("duplicate alias `{alias}`"), &[]));
        }
        c.expect_keyword("as")?;
        c.expect_punct('(')?;
        let extract = parse_extract(&mut c)?;
        c.expect_punct(')')?;
        with_clauses.push(WithClause { alias, extract });
        if !c.eat_punct(',') {
            break;
        }
    }
    if !c.eat_punct(')') {
        return Err(c.error(&["`,`", "`)`"]));
    }
    let mut predicates = Vec::new();
    if c.eat_keyword("where") {
        predicates.push(parse_predicate(&mut c)?);
        while c.eat_keyword("and") {
            predicates.push(parse_predicate(&mut c)?);
        }
    }
    c.eat_punct(';');
    if !c.at_end() {
        let expected: &[&str] = if predicates.is_empty() { &["where", "`;`"] } else { &["and", "`;`"] };
        return Err(c.error(expected));
    }
    Ok(BioFlowQuery {
        select,
        with_clauses,
        predicates,
    })
}

/// Canonical text: lowercase keywords, one clause element per line.
pub fn render_bioflow(q: &BioFlowQuery) -> String {
    let mut out = String::from("select ");
    match &q.select {
        Select::All => out.push('*'),
        Select::Columns(cols) => out.push_str(&cols.join(", ")),
    }
    out.push_str("\nfrom (\n");
    for (i, w) in q.with_clauses.iter().enumerate() {
        let lead = if i == 0 { "  with " } else { "  " };
        let _ = writeln!(out, "{lead}{} as (", w.alias);
        let e = &w.extract;
        let _ = writeln!(out, "    extract {}", e.attributes.join(", "));
        let using: Vec<String> = [("matcher", &e.matcher), ("filler", &e.filler), ("wrapper", &e.wrapper)]
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k} {v}")))
            .collect();
        if !using.is_empty() {
            let _ = writeln!(out, "    using {}", using.join(" "));
        }
        let _ = writeln!(out, "    from {}", e.source_url);
        let _ = writeln!(out, "    submit {}", e.submit);
        out.push_str(if i + 1 < q.with_clauses.len() { "  ),\n" } else { "  )\n" });
    }
    out.push(')');
    if !q.predicates.is_empty() {
        let preds: Vec<String> = q.predicates.iter().map(ToString::to_string).collect();
        let _ = write!(out, "\nwhere {}", preds.join(" and "));
    }
    out.push_str(";\n");
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::process::tests::perturb;
    use proptest::prelude::*;
    use rand::SeedableRng;

    pub const WORKED: &str = "select GeneSymbol, ProteinID, InfertilityData
from (
    with uniprot as (
        extract GeneSymbol, ProteinID
        using matcher S-match
        wrapper Web-Prospector
        from https://www.uniprot.org
        submit uniprot
    ),
    mikdb as (
        extract InfertilityData
        using matcher S-match
        wrapper Web-Prospector
        from http://mik.bicnirrh.res.in/
        submit mikdb
    )
)
where GeneSymbol = 'H2A histone';";

    pub const BF_KEYWORDS: &[&str] = &[
        "select", "from", "with", "as", "extract", "using", "matcher", "filler", "wrapper", "submit", "where", "and",
        "like",
    ];

    #[test]
    fn worked_query() {
        let q = parse_bioflow(WORKED).unwrap();
        assert_eq!(q.select, Select::Columns(vec!["GeneSymbol".into(), "ProteinID".into(), "InfertilityData".into()]));
        assert_eq!(q.with_clauses.len(), 2);
        assert_eq!(q.with_clauses[0].alias, "uniprot");
        assert_eq!(q.with_clauses[1].alias, "mikdb");
        let u = &q.with_clauses[0].extract;
        assert_eq!(u.attributes, ["GeneSymbol", "ProteinID"]);
        assert_eq!(u.matcher.as_deref(), Some("S-match"));
        assert_eq!(u.wrapper.as_deref(), Some("Web-Prospector"));
        assert_eq!(u.filler, None);
        assert_eq!(u.source_url, "https://www.uniprot.org");
        assert_eq!(q.predicates, [Predicate {
            column: "GeneSymbol".into(),
            op: Op::Eq,
            literal: Literal::Str("H2A histone".into()),
        }]);
    }

    #[test]
    fn minimal_query_without_where() {
        let q = parse_bioflow("select A from ( with x as ( extract A from http://e/ submit x ) )").unwrap();
        assert_eq!(q.with_clauses.len(), 1);
        assert!(q.predicates.is_empty());
        let q = parse_bioflow("SELECT * FROM (WITH x AS (EXTRACT A FROM http://e/ SUBMIT x));").unwrap();
        assert_eq!(q.select, Select::All);
    }

    #[test]
    fn semantic_and_syntax_errors() {
        let err = parse_bioflow(
            "select A from (with x as (extract A from http://e/ submit x),\n X as (extract A from http://f/ submit x))",
        )
        .unwrap_err();
        assert!(err.message.contains("duplicate alias"));
        assert_eq!((err.line, err.column), (2, 2));

        let err = parse_bioflow("select A from (with x as (extract A using from http://e/ submit x))").unwrap_err();
        assert_eq!(err.expected, ["matcher", "filler", "wrapper"]);

        let err = parse_bioflow("select A from (with x as (extract A from http://e/ submit x)) where A ~ 'b'").unwrap_err();
        assert_eq!(err.expected, ["`=`", "like"]);

        let err = parse_bioflow(
            "select A from (with x as (extract A using matcher m matcher n from http://e/ submit x))",
        )
        .unwrap_err();
        assert!(err.message.contains("twice"));
        assert!(parse_bioflow("select A from (with x as (extract from http://e/ submit x))").is_err());
    }

    #[test]
    fn round_trip_and_perturbations() {
        let q = parse_bioflow(WORKED).unwrap();
        let canonical = render_bioflow(&q);
        assert_eq!(parse_bioflow(&canonical).unwrap(), q);
        assert_eq!(render_bioflow(&parse_bioflow(&canonical).unwrap()), canonical);
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..500 {
            let p = perturb(WORKED, &mut rng, BF_KEYWORDS);
            assert_eq!(parse_bioflow(&p).unwrap(), q, "{p}");
        }
    }

    #[test]
    fn literals() {
        let q = parse_bioflow(
            "select * from (with x as (extract A from http://e/ submit x)) where A like 'it''s' and B = -3.5",
        )
        .unwrap();
        assert_eq!(q.predicates[0].literal, Literal::Str("it's".into()));
        assert_eq!(q.predicates[1].literal, Literal::Num("-3.5".into()));
        assert_eq!(parse_bioflow(&render_bioflow(&q)).unwrap(), q);
    }

    fn ident() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9_]{0,6}".prop_filter("not a keyword", |s| {
            !BF_KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
        })
    }

    pub fn query_strategy() -> impl Strategy<Value = BioFlowQuery> {
        let clause = (
            prop::collection::vec(ident(), 1..4),
            prop::option::of(Just("S-match".to_string())),
            prop::option::of(Just("form-fill".to_string())),
            prop::option::of(Just("Web-Prospector".to_string())),
            ident(),
        );
        let pred = (ident(), prop::bool::ANY, prop::bool::ANY, "[a-zA-Z' %0-9]{0,10}", -1000i64..1000);
        (
            prop::option::of(prop::collection::vec(ident(), 1..4)),
            prop::collection::btree_map(ident(), clause, 1..4),
            prop::collection::vec(pred, 0..3),
        )
            .prop_map(|(select, clauses, preds)| BioFlowQuery {
                select: select.map_or(Select::All, Select::Columns),
                with_clauses: clauses
                    .into_iter()
                    .enumerate()
                    .map(|(i, (alias, (attributes, matcher, filler, wrapper, submit)))| WithClause {
                        alias,
                        extract: ExtractClause {
                            attributes,
                            matcher,
                            filler,
                            wrapper,
                            source_url: format!("http://source{i}.example/path"),
                            submit,
                        },
                    })
                    .collect(),
                predicates: preds
                    .into_iter()
                    .map(|(column, like, num, s, n)| Predicate {
                        column,
                        op: if like { Op::Like } else { Op::Eq },
                        literal: if num { Literal::Num(n.to_string()) } else { Literal::Str(s) },
                    })
                    .collect(),
            })
            .prop_filter("aliases unique ignoring case", |q| {
                let mut seen = HashSet::new();
                q.with_clauses.iter().all(|w| seen.insert(w.alias.to_lowercase()))
            })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(q in query_strategy()) {
            prop_assert_eq!(parse_bioflow(&render_bioflow(&q)).unwrap(), q);
        }

        #[test]
        fn total_on_arbitrary_input(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
            let _ = parse_bioflow(&String::from_utf8_lossy(&bytes));
        }

        #[test]
        fn total_on_mutated_input(cut in 0usize..600, junk in "[(),;*=' a-z\\n]{0,8}") {
            let mut s = WORKED.to_string();
            let at = s.char_indices().map(|(i, _)| i).nth(cut % WORKED.len()).unwrap_or(0);
            s.insert_str(at, &junk);
            let _ = parse_bioflow(&s);
        }
    }
}
