use std::collections::BTreeSet;
use std::sync::Mutex;

use sourcebridge::keyword::{combinatorial_search, KeywordBackend, KeywordError, SearchConfig};
use sourcebridge::Document;

use crate::{ensure, Outcome};

/// Answers only for one exact keyword set and logs every query.
struct OneAnswer {
    answer: Option<BTreeSet<String>>,
    log: Mutex<Vec<Vec<String>>>,
}

impl OneAnswer {
    fn new(answer: Option<&[&str]>) -> Self {
        Self {
            answer: answer.map(|a| a.iter().map(|s| s.to_string()).collect()),
            log: Mutex::new(Vec::new()),
        }
    }
}

impl KeywordBackend for OneAnswer {
    fn search(&self, keywords: &[String]) -> Result<Vec<Document>, KeywordError> {
        self.log.lock().unwrap().push(keywords.to_vec());
        let asked: BTreeSet<String> = keywords.iter().cloned().collect();
        if self.answer.as_ref() == Some(&asked) {
            return Ok(vec![Document {
                id: "PMID1".into(),
                title: "hit".into(),
                abstract_text: "hit".into(),
                access_link: "https://example.org/".into(),
                year: 2020,
            }]);
        }
        Ok(Vec::new())
    }

    fn page_size(&self) -> usize {
        20
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

pub fn combination_order() -> Outcome {
    let keywords: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
    let config = SearchConfig { min_size: 2, budget: 64 };

    let expected: Vec<&str> = vec![
        "abcde", "abcd", "abce", "abde", "acde", "bcde", "abc", "abd", "abe", "acd", "ace", "ade", "bcd", "bce", "bde",
    ];
    let backend = OneAnswer::new(Some(&["b", "d", "e"]));
    let trace = combinatorial_search(&keywords, &backend, config).map_err(|e| e.to_string())?;
    let issued: Vec<String> = backend.log.lock().unwrap().iter().map(|k| k.concat()).collect();
    ensure(issued == expected, || format!("issued {issued:?}"))?;
    let traced: Vec<String> = trace.issued.iter().map(|q| q.query.replace(" AND ", "")).collect();
    ensure(traced == expected, || format!("trace {traced:?}"))?;
    let result = trace.result.ok_or("no result at b AND d AND e")?;
    ensure(result.issued_query == "b AND d AND e" && result.combo_size == 3, || {
        format!("stopped at {} ({})", result.issued_query, result.combo_size)
    })?;

    let never = OneAnswer::new(None);
    let trace = combinatorial_search(&keywords, &never, config).map_err(|e| e.to_string())?;
    let total: usize = (2..=5).map(|i| binomial(5, i)).sum();
    let count = never.log.lock().unwrap().len();
    ensure(count == total && trace.issued.len() == total, || {
        format!("{count} queries issued, expected {total}")
    })?;
    ensure(trace.result.is_none(), || "expected null result".into())?;
    ensure(!trace.budget_exhausted, || "budget exhausted".into())?;
    Ok(format!("hit after {} queries; {total} queries then null", expected.len()))
}
