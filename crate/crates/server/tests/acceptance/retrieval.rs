use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcebridge::corpus::HashEmbedder;
use sourcebridge::eval::{build_run, hit_rate, mrr, EvalQuery};
use sourcebridge::{CorpusIndex, Document};

use crate::{ensure, Outcome};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "pe", "su", "gro", "bel", "dan", "fen", "hul", "jor",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(2..=4)).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Drops, duplicates and swaps a few words.
fn near_copy(words: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut out: Vec<String> = words.iter().filter(|_| !rng.gen_bool(0.1)).cloned().collect();
    for _ in 0..3 {
        let i = rng.gen_range(0..out.len());
        let j = rng.gen_range(0..out.len());
        out.swap(i, j);
    }
    if rng.gen_bool(0.5) {
        let w = out[rng.gen_range(0..out.len())].clone();
        out.push(w);
    }
    out.join(" ")
}

pub fn synthetic_benchmark() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let vocab: Vec<String> = (0..2000).map(|_| word(&mut rng)).collect();
    let mut abstracts = Vec::new();
    let docs: Vec<Document> = (0..50)
        .map(|i| {
            let words: Vec<String> = (0..60).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect();
            abstracts.push(words.clone());
            Document {
                id: format!("S{i:03}"),
                title: format!("{} {}", words[0], words[1]),
                abstract_text: words.join(" "),
                access_link: format!("https://example.org/db/{i}"),
                year: 2010 + (i % 15) as i32,
            }
        })
        .collect();
    let embedder = HashEmbedder::default();
    let index = CorpusIndex::build(docs, &embedder, 4).map_err(|e| e.to_string())?;
    let queries: Vec<EvalQuery> = (0..200)
        .map(|i| {
            let d = i % 50;
            EvalQuery {
                query_id: format!("sq{i:03}"),
                relevant_doc_id: format!("S{d:03}"),
                query: near_copy(&abstracts[d], &mut rng),
            }
        })
        .collect();
    let run = build_run(&index, &embedder, &queries, 10, 4).map_err(|e| e.to_string())?;
    let hr = hit_rate(&run).map_err(|e| e.to_string())?;
    let rr = mrr(&run).map_err(|e| e.to_string())?;
    ensure(hr == 1.0, || format!("hit rate@4 {hr}"))?;
    ensure(rr >= 0.95, || format!("mrr {rr}"))?;
    Ok(format!("hit rate@4 {hr}, mrr {rr:.4}"))
}
