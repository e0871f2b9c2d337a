use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcebridge::assistant::FixtureAssistant;
use sourcebridge::corpus::HashEmbedder;
use sourcebridge::query::QueryBundle;
use sourcebridge::wrapper::{
    parse_html_tables, smart_wrap, FixtureSite, FixtureWeb, PageSpec, SiteSpec, WrapConfig, WrapContext, WrapOutcome,
};

use crate::{ensure, Outcome};

const FRAGMENTS: &[&str] = &[
    "<table>", "</table>", "<tr>", "</tr>", "<td>", "</td>", "<th>", "</th>", "<thead>", "</thead>", "<tbody>",
    "<caption>H2A</caption>", "<td colspan=\"99999999\">", "<td rowspan=\"-3\">", "<th colspan=x>", "<td colspan=0>",
    "<form action=\"/search\" method=\"post\">", "<form action=\"javascript:void(0)\">", "<input name=\"q\">",
    "<input type=\"submit\">", "<select name=\"s\"><option>a", "</form>", "<a href=\"/data.csv\">download H2A</a>",
    "<a href=\"http://[::1\">broken</a>", "<a href=\"\">empty</a>", "<a href=\"data.tsv\">", "<a href=\"#x\">",
    "<a href=\"mailto:x@y\">", "<script>document.write('<table>')</script>", "<style>td{}</style>",
    "<!-- <table><tr><td>", "-->", "<![CDATA[", "]]>", "&amp;&lt;&#0;&#xD800;&bogus;", "\u{0}", "\u{feff}",
    "H2AX", "P16104", "Azoospermia", "1.5e400", "-0", "NaN", "<div>", "</div>", "<p>", "<br/>", "<",
    ">", "\"", "'", "<table><tr><td>a<td>b<tr><td>c", "<td>\u{202e}gniht</td>", "<meta charset=\"utf-16\">",
    "<iframe src=\"/x\">", "<base href=\"http://elsewhere.example/\">", "<html>", "<body>", "</html>",
];

fn case(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::new();
    match rng.gen_range(0..10) {
        // deep nesting
        0 => {
            let depth = rng.gen_range(100..3000);
            let tag = ["div", "table", "td", "span"].choose(rng).unwrap();
            for _ in 0..depth {
                out.extend_from_slice(format!("<{tag}>").as_bytes());
            }
            out.extend_from_slice(b"x");
        }
        // raw bytes
        1 => out.extend((0..rng.gen_range(0..2000)).map(|_| rng.gen::<u8>())),
        // a wide ragged table
        2 => {
            out.extend_from_slice(b"<table>");
            for r in 0..rng.gen_range(0..50) {
                out.extend_from_slice(b"<tr>");
                for c in 0..rng.gen_range(0..80) {
                    out.extend_from_slice(format!("<td>{r}.{c}").as_bytes());
                }
            }
        }
        _ => {
            for _ in 0..rng.gen_range(1..200) {
                out.extend_from_slice(FRAGMENTS.choose(rng).unwrap().as_bytes());
                if rng.gen_bool(0.05) {
                    let cut = rng.gen_range(0..out.len());
                    out.truncate(cut);
                }
            }
        }
    }
    out
}

fn web_for(body: Vec<u8>) -> FixtureWeb {
    let mut pages = BTreeMap::new();
    pages.insert(
        "/".to_string(),
        PageSpec {
            file: Some("index.html".into()),
            ..PageSpec::default()
        },
    );
    let spec = SiteSpec {
        base_url: "https://fuzz.example/".into(),
        pages,
        forms: Vec::new(),
    };
    let site = FixtureSite::from_parts(spec, HashMap::from([("index.html".to_string(), body)])).unwrap();
    let mut web = FixtureWeb::new();
    web.add(site);
    web
}

pub fn malformed_html() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0009);
    let embedder = HashEmbedder::default();
    let assistant = FixtureAssistant::identity();
    let query = QueryBundle::for_term("H2A histone");
    let (mut tables, mut empty, mut errors) = (0, 0, 0);
    let quiet = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let result = (|| {
        for i in 0..500 {
            let body = case(&mut rng);
            let html = String::from_utf8_lossy(&body).into_owned();
            let parsed = catch_unwind(|| parse_html_tables(&html, "https://fuzz.example/"))
                .map_err(|_| format!("case {i}: table parser panicked"))?;
            let web = web_for(body);
            let ctx = WrapContext {
                fetcher: &web,
                embedder: &embedder,
                assistant: &assistant,
                config: WrapConfig::default(),
            };
            let outcome = catch_unwind(AssertUnwindSafe(|| smart_wrap("https://fuzz.example/", &query, &ctx)))
                .map_err(|_| format!("case {i}: wrapper panicked"))?;
            match outcome {
                WrapOutcome::Wrapped { .. } => tables += 1,
                WrapOutcome::Unsuitable { error_class, .. } => {
                    ensure(!error_class.is_empty(), || format!("case {i}: untyped failure"))?;
                    if error_class == "no_candidates" && parsed.is_empty() {
                        empty += 1;
                    } else {
                        errors += 1;
                    }
                }
            }
        }
        Ok::<_, String>(())
    })();
    std::panic::set_hook(quiet);
    result?;
    Ok(format!("500 cases: {tables} tables, {empty} empty, {errors} typed errors"))
}
