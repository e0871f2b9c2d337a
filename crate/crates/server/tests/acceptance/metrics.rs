use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcebridge::eval::{
    fair_success_rate, findability, findability_bias, hit_rate, mean_findability, mrr, per_doc_findability,
    EvalError, MetricsReport, RetrievalRun, RunRecord,
};

use crate::{ensure, Outcome};

const TOL: f64 = 1e-12;

fn reciprocal(r: &RunRecord, k: usize) -> f64 {
    for (pos, id) in r.ranked.iter().enumerate() {
        if pos >= k {
            break;
        }
        if *id == r.relevant_doc_id {
            return 1.0 / (pos + 1) as f64;
        }
    }
    0.0
}

struct Oracle {
    docs: Vec<String>,
    per_doc: Vec<f64>,
    mean: f64,
    gini: Option<f64>,
    hit_rate: f64,
    mrr: f64,
}

/// Straight from the definitions, with a pairwise Gini.
fn oracle(records: &[RunRecord], k: usize) -> Oracle {
    let mut docs: Vec<String> = Vec::new();
    for r in records {
        if !docs.contains(&r.relevant_doc_id) {
            docs.push(r.relevant_doc_id.clone());
        }
    }
    let mut sums = vec![(0.0, 0usize); docs.len()];
    for r in records {
        let i = docs.iter().position(|d| *d == r.relevant_doc_id).unwrap();
        sums[i].0 += reciprocal(r, k);
        sums[i].1 += 1;
    }
    let per_doc: Vec<f64> = sums.iter().map(|(s, m)| s / *m as f64).collect();
    let n = per_doc.len() as f64;
    let mean = per_doc.iter().sum::<f64>() / n;
    let gini = (mean > 0.0).then(|| {
        let mut diff = 0.0;
        for a in &per_doc {
            for b in &per_doc {
                diff += (a - b).abs();
            }
        }
        diff / (2.0 * n * n * mean)
    });
    let q = records.len() as f64;
    Oracle {
        docs,
        hit_rate: records.iter().filter(|r| reciprocal(r, k) > 0.0).count() as f64 / q,
        mrr: records.iter().map(|r| reciprocal(r, k)).sum::<f64>() / q,
        per_doc,
        mean,
        gini,
    }
}

fn random_records(rng: &mut ChaCha8Rng) -> Vec<RunRecord> {
    let n_docs = rng.gen_range(1..=100);
    let ids: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
    let mut records = Vec::new();
    for (i, doc) in ids.iter().enumerate() {
        for j in 0..4 {
            let len = rng.gen_range(0..=n_docs.min(10));
            let mut ranked: Vec<String> = sample(rng, n_docs, len).into_iter().map(|j| ids[j].clone()).collect();
            // relevant document present in roughly half the queries
            if rng.gen_bool(0.5) && !ranked.contains(doc) {
                let at = rng.gen_range(0..=ranked.len());
                ranked.insert(at, doc.clone());
            }
            records.push(RunRecord {
                query_id: format!("q{i}_{j}"),
                relevant_doc_id: doc.clone(),
                ranked,
            });
        }
    }
    records
}

fn close(what: &str, got: f64, want: f64) -> Result<(), String> {
    ensure((got - want).abs() <= TOL, || format!("{what}: got {got}, oracle {want}"))
}

pub fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let k = 4;
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let records = random_records(&mut rng);
        let o = oracle(&records, k);
        let run = RetrievalRun::new(records, k).map_err(|e| e.to_string())?;
        let ctx = |m: &str| format!("case {case}: {m}");

        let per_doc = per_doc_findability(&run);
        ensure(per_doc.len() == o.docs.len(), || ctx("document count"))?;
        for (i, (d, want)) in o.docs.iter().zip(&o.per_doc).enumerate() {
            close(&ctx(&format!("per-doc findability {d}")), per_doc[d], *want)?;
            worst = worst.max((per_doc[d] - want).abs());
            // the single-document entry point scans the whole run; spot-check it
            if i % 10 == 0 {
                let got = findability(&run, d).map_err(|e| ctx(&e.to_string()))?;
                close(&ctx(&format!("findability {d}")), got, *want)?;
            }
        }
        let mean = mean_findability(&run).map_err(|e| ctx(&e.to_string()))?;
        close(&ctx("mean findability"), mean, o.mean)?;
        let values: Vec<f64> = per_doc.values().copied().collect();
        match (findability_bias(&values), o.gini) {
            (Ok(g), Some(want)) => {
                close(&ctx("bias"), g, want)?;
                worst = worst.max((g - want).abs());
            }
            (Err(EvalError::AllZero), None) => {}
            (got, want) => return Err(ctx(&format!("bias: got {got:?}, oracle {want:?}"))),
        }
        close(&ctx("hit rate"), hit_rate(&run).map_err(|e| e.to_string())?, o.hit_rate)?;
        close(&ctx("mrr"), mrr(&run).map_err(|e| e.to_string())?, o.mrr)?;
        let report = MetricsReport::compute(&run).map_err(|e| ctx(&e.to_string()))?;
        close(&ctx("report mrr"), report.mrr, o.mrr)?;
    }
    Ok(format!("1000 runs, max deviation {worst:.1e}"))
}

fn run_with_ranks(ranks: &[Option<usize>]) -> RetrievalRun {
    let records = ranks
        .iter()
        .enumerate()
        .map(|(i, rank)| {
            let mut ranked: Vec<String> = (0..6).map(|j| format!("other{j}")).collect();
            if let Some(r) = rank {
                ranked[r - 1] = "doc".into();
            }
            RunRecord {
                query_id: format!("q{i}"),
                relevant_doc_id: "doc".into(),
                ranked,
            }
        })
        .collect();
    RetrievalRun::new(records, 4).unwrap()
}

pub fn fixed_points() -> Outcome {
    let e = |x: EvalError| x.to_string();
    let uniform = findability_bias(&[0.25; 7]).map_err(e)?;
    ensure(uniform == 0.0, || format!("uniform bias {uniform}"))?;

    let records = (0..10)
        .map(|i| RunRecord {
            query_id: format!("q{i}"),
            relevant_doc_id: format!("d{}", i % 5),
            ranked: vec![format!("d{}", i % 5), "x".into()],
        })
        .collect();
    let top = RetrievalRun::new(records, 4).map_err(e)?;
    let (mf, hr, rr) = (mean_findability(&top).map_err(e)?, hit_rate(&top).map_err(e)?, mrr(&top).map_err(e)?);
    ensure(mf == 1.0 && hr == 1.0 && rr == 1.0, || format!("all rank 1: {mf} {hr} {rr}"))?;

    let two = findability_bias(&[0.0, 1.0]).map_err(e)?;
    ensure(two == 0.5, || format!("f=[0,1] bias {two}"))?;

    let f = findability(&run_with_ranks(&[Some(1), Some(2), Some(4), None]), "doc").map_err(e)?;
    ensure(f == 0.4375, || format!("ranks [1,2,4,absent] f {f}"))?;
    Ok("bias 0, 1/1/1, bias 0.5, f 0.4375".into())
}

pub fn fair_success() -> Outcome {
    let mut out = Vec::new();
    for (s, a, want) in [(3, 20, 15.0), (7, 20, 35.0), (9, 20, 45.0)] {
        let got = fair_success_rate(s, a).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("({s},{a}) gave {got}, expected {want}"))?;
        out.push(format!("{got}%"));
    }
    Ok(out.join(" "))
}
