use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcebridge::bioflow::{execute, parse_bioflow, MemorySource, Registry};
use sourcebridge::schema::SynonymTable;
use sourcebridge::table::{ExtractionMethod, Provenance};
use sourcebridge::DataTable;

use crate::{ensure, Outcome};

const TISSUES: &[&str] = &["testis", "Liver", "brain", "TESTIS cortex", "kidney"];
const NOTES: &[&str] = &["alpha", "Beta", "gamma ray", "ab", "delta"];
const ORGANISMS: &[&str] = &["human", "mouse"];

fn pick(rng: &mut ChaCha8Rng, values: &[&str], blank: f64) -> String {
    if rng.gen_bool(blank) {
        String::new()
    } else {
        values.choose(rng).unwrap().to_string()
    }
}

fn number(rng: &mut ChaCha8Rng, blank: f64) -> String {
    if rng.gen_bool(blank) {
        String::new()
    } else {
        rng.gen_range(0..6).to_string()
    }
}

struct Case {
    org: bool,
    left: Vec<Vec<String>>,
    right: Vec<Vec<String>>,
    select: Vec<&'static str>,
    predicates: Vec<(&'static str, &'static str, String)>,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let org = rng.gen_bool(0.3);
    let keys: Vec<String> = (0..rng.gen_range(1..=10)).map(|i| format!("G{i}")).collect();
    let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
    let mut left = Vec::new();
    for _ in 0..rng.gen_range(0..=200) {
        let mut row = vec![pick(rng, &keys, 0.05), number(rng, 0.1), pick(rng, NOTES, 0.1)];
        if org {
            row.push(pick(rng, ORGANISMS, 0.05));
        }
        left.push(row);
    }
    let mut right = Vec::new();
    for _ in 0..rng.gen_range(0..=200) {
        let mut row = vec![pick(rng, &keys, 0.05), pick(rng, TISSUES, 0.1), number(rng, 0.1)];
        if org {
            row.push(pick(rng, ORGANISMS, 0.05));
        }
        right.push(row);
    }
    let mut columns = vec!["GeneSymbol", "Score", "Note", "Tissue", "Level"];
    if org {
        columns.push("Organism");
    }
    columns.shuffle(rng);
    let select = columns[..rng.gen_range(1..=columns.len())].to_vec();
    let mut predicates = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        predicates.push(match rng.gen_range(0..5) {
            0 => ("GeneSymbol", "=", keys.choose(rng).unwrap().to_string()),
            1 => ("Score", "=", rng.gen_range(0..6).to_string()),
            2 => ("Tissue", "like", ["test", "ER", "i"].choose(rng).unwrap().to_string()),
            3 => ("Note", "like", ["a", "ta", "B"].choose(rng).unwrap().to_string()),
            _ => ("Level", "=", rng.gen_range(0..6).to_string()),
        });
    }
    Case {
        org,
        left,
        right,
        select,
        predicates,
    }
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> DataTable {
    DataTable::from_text(
        headers.iter().map(|h| h.to_string()).collect(),
        rows.to_vec(),
        Provenance {
            source_url: "https://example.org/".into(),
            method: ExtractionMethod::InMemory,
        },
    )
}

fn query_text(c: &Case) -> String {
    let org = if c.org { ", Organism" } else { "" };
    let mut q = format!(
        "select {} from (with l as (extract GeneSymbol, Score, Note{org} from https://left.example/ submit l), \
         r as (extract GeneSymbol, Tissue, Level{org} from https://right.example/ submit r))",
        c.select.join(", ")
    );
    for (i, (col, op, lit)) in c.predicates.iter().enumerate() {
        let lit = if *op == "=" && (*col == "Score" || *col == "Level") {
            lit.clone()
        } else {
            format!("'{lit}'")
        };
        q.push_str(if i == 0 { " where " } else { " and " });
        q.push_str(&format!("{col} {op} {lit}"));
    }
    q
}

/// Every left row against every right row, on raw text.
fn nested_loop(c: &Case) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for l in &c.left {
        for r in &c.right {
            let key_ok = !l[0].is_empty() && l[0] == r[0] && (!c.org || (!l[3].is_empty() && l[3] == r[3]));
            if !key_ok {
                continue;
            }
            let value = |col: &str| -> String {
                match col {
                    "GeneSymbol" => l[0].clone(),
                    "Score" => l[1].clone(),
                    "Note" => l[2].clone(),
                    "Organism" => l[3].clone(),
                    "Tissue" => r[1].clone(),
                    "Level" => r[2].clone(),
                    _ => unreachable!(),
                }
            };
            let keep = c.predicates.iter().all(|(col, op, lit)| {
                let v = value(col);
                !v.is_empty()
                    && match *op {
                        "=" => v == *lit,
                        _ => v.to_lowercase().contains(&lit.to_lowercase()),
                    }
            });
            if keep {
                out.push(c.select.iter().map(|col| value(col)).collect());
            }
        }
    }
    out.sort();
    out
}

pub fn nested_loop_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let synonyms = SynonymTable::builtin();
    let mut rows = 0;
    for case in 0..500 {
        let c = random_case(&mut rng);
        let org = if c.org { vec!["Organism"] } else { vec![] };
        let lh: Vec<&str> = ["GeneSymbol", "Score", "Note"].into_iter().chain(org.clone()).collect();
        let rh: Vec<&str> = ["Symbol", "Tissue", "Level"].into_iter().chain(org).collect();
        let source = MemorySource::new()
            .with_alias("l", table(&lh, &c.left))
            .with_alias("r", table(&rh, &c.right));
        let text = query_text(&c);
        let q = parse_bioflow(&text).map_err(|e| format!("case {case}: {e}\n{text}"))?;
        let ex = execute(&q, &source, &Registry::default(), &synonyms).map_err(|e| format!("case {case}: {e}\n{text}"))?;
        ensure(ex.failures.is_empty(), || format!("case {case}: {:?}", ex.failures))?;
        let names = ex.table.column_names();
        ensure(names == c.select, || format!("case {case}: columns {names:?}"))?;
        let mut got: Vec<Vec<String>> = ex
            .table
            .rows
            .iter()
            .map(|r| r.iter().map(|cell| cell.render()).collect())
            .collect();
        got.sort();
        let want = nested_loop(&c);
        ensure(got == want, || {
            format!("case {case}: {} rows, reference {}\n{text}", got.len(), want.len())
        })?;
        rows += want.len();
    }
    Ok(format!("500 table pairs, {rows} joined rows"))
}
