use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcebridge::bioflow::{parse_bioflow, render_bioflow};
use sourcebridge::process::{parse_pd, render_pd};

use crate::{ensure, fixtures, Outcome};

const WORKED: &str = "select GeneSymbol, ProteinID, InfertilityData
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

const KEYWORDS: &[&str] = &[
    "select", "from", "with", "as", "extract", "using", "matcher", "filler", "wrapper", "submit", "where", "and",
    "like", "create", "process", "at", "access", "browser", "postfix", "accepts", "filter", "returns", "table",
    "primary", "key", "string", "int",
];

#[derive(Debug, PartialEq)]
enum Token {
    Word(String),
    Punct(char),
    Quoted(String),
}

/// Words, the four punctuation characters and quoted literals, kept verbatim.
fn tokens(src: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if matches!(c, '(' | ')' | ',' | ';') {
            out.push(Token::Punct(c));
            chars.next();
        } else if c == '\'' {
            let mut s = String::from(chars.next().unwrap());
            while let Some(c) = chars.next() {
                s.push(c);
                if c == '\'' {
                    if chars.peek() == Some(&'\'') {
                        s.push(chars.next().unwrap());
                    } else {
                        break;
                    }
                }
            }
            out.push(Token::Quoted(s));
        } else {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || matches!(c, '(' | ')' | ',' | ';' | '\'') {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push(Token::Word(s));
        }
    }
    out
}

fn gap(rng: &mut ChaCha8Rng, required: bool) -> String {
    let pieces = [" ", "  ", "\t", "\n", "\r\n", "\n\n    ", " -- note\n"];
    let n = rng.gen_range(usize::from(required)..=3);
    let mut s: String = (0..n).map(|_| *pieces.choose(rng).unwrap()).collect();
    if required && s.is_empty() {
        s.push(' ');
    }
    s
}

fn random_case(word: &str, rng: &mut ChaCha8Rng) -> String {
    word.chars()
        .map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

/// Re-spaces every token boundary and re-cases every keyword.
fn perturb(src: &str, rng: &mut ChaCha8Rng) -> String {
    let toks = tokens(src);
    let mut out = gap(rng, false);
    for (i, t) in toks.iter().enumerate() {
        if i > 0 {
            let both_words = !matches!(t, Token::Punct(_)) && !matches!(toks[i - 1], Token::Punct(_));
            out.push_str(&gap(rng, both_words));
        }
        match t {
            Token::Word(w) if KEYWORDS.contains(&w.to_lowercase().as_str()) => out.push_str(&random_case(w, rng)),
            Token::Word(w) | Token::Quoted(w) => out.push_str(w),
            Token::Punct(c) => out.push(*c),
        }
    }
    out.push_str(&gap(rng, false));
    out
}

pub fn round_trips() -> Outcome {
    let mut pds = Vec::new();
    for name in ["MiKDB.pd", "UniProtAccess.pd"] {
        let text = std::fs::read_to_string(fixtures().join("kb").join(name)).map_err(|e| e.to_string())?;
        let ast = parse_pd(&text).map_err(|e| format!("{name}: {e}"))?;
        let canonical = render_pd(&ast);
        let again = parse_pd(&canonical).map_err(|e| format!("{name} canonical: {e}"))?;
        ensure(again == ast, || format!("{name}: re-parse differs"))?;
        ensure(render_pd(&again) == canonical, || format!("{name}: rendering not canonical"))?;
        pds.push((text, ast));
    }
    let bf = parse_bioflow(WORKED).map_err(|e| format!("worked query: {e}"))?;
    let canonical = render_bioflow(&bf);
    let again = parse_bioflow(&canonical).map_err(|e| format!("worked query canonical: {e}"))?;
    ensure(again == bf, || "worked query: re-parse differs".into())?;
    ensure(render_bioflow(&again) == canonical, || "worked query: rendering not canonical".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let cases = 10_000;
    for i in 0..cases {
        match i % 3 {
            2 => {
                let src = if rng.gen_bool(0.5) { WORKED.to_string() } else { canonical.clone() };
                let text = perturb(&src, &mut rng);
                let got = parse_bioflow(&text).map_err(|e| format!("case {i}: {e}\n{text}"))?;
                ensure(got == bf, || format!("case {i}: AST changed\n{text}"))?;
            }
            n => {
                let (src, ast) = &pds[n];
                let text = perturb(src, &mut rng);
                let got = parse_pd(&text).map_err(|e| format!("case {i}: {e}\n{text}"))?;
                ensure(got == *ast, || format!("case {i}: AST changed\n{text}"))?;
            }
        }
    }
    Ok(format!("3 texts round-trip, {cases} perturbations stable"))
}
