//! Acceptance criteria, one line per criterion.
//!
//! Run with `cargo test -p sourcebridge-server --test acceptance`.

mod dsl;
mod e2e;
mod fuzz;
mod join;
mod metrics;
mod retrieval;
mod search;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

pub type Outcome = Result<String, String>;

pub fn fixtures() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))
}

/// Fails with `what` unless `ok`.
pub fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        name: "metric oracle equivalence",
        budget: Some(Duration::from_secs(10)),
        check: metrics::oracle_equivalence,
    },
    Criterion {
        name: "metric fixed points",
        budget: None,
        check: metrics::fixed_points,
    },
    Criterion {
        name: "FAIR success rate",
        budget: None,
        check: metrics::fair_success,
    },
    Criterion {
        name: "synthetic retrieval benchmark",
        budget: Some(Duration::from_secs(30)),
        check: retrieval::synthetic_benchmark,
    },
    Criterion {
        name: "combinatorial search order",
        budget: None,
        check: search::combination_order,
    },
    Criterion {
        name: "DSL round trips",
        budget: Some(Duration::from_secs(5)),
        check: dsl::round_trips,
    },
    Criterion {
        name: "join executor equivalence",
        budget: None,
        check: join::nested_loop_equivalence,
    },
    Criterion {
        name: "fixture end-to-end",
        budget: Some(Duration::from_secs(20)),
        check: e2e::fixture_end_to_end,
    },
    Criterion {
        name: "wrapper robustness",
        budget: None,
        check: fuzz::malformed_html,
    },
    Criterion {
        name: "guided/auto agreement",
        budget: None,
        check: e2e::guided_matches_auto,
    },
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {:<32} {:>9.2?}  {detail}", c.name, elapsed),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:<32} {:>9.2?}  {detail}", c.name, elapsed);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
