use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sourcebridge::engine::{Engine, EngineConfig, EngineParts, MemoryStore, Run, RunState, Stage};
use sourcebridge::process::ProcessKB;
use sourcebridge::wrapper::{FetchConfig, FetchError, FetchRequest, FetchResponse, Fetcher, FixtureWeb, HttpFetcher};
use sourcebridge_server::api::table_json;
use sourcebridge_server::fixture_server::BackgroundSites;

use crate::{ensure, fixtures, Outcome};

const Q: &str = "Retrieve gene and protein information for all \"H2A histone\" genes from UniProt and associated infertility data from the Male Infertility Knowledgebase (MiKDB).";

/// Hand-joined from the fixture pages: UniProt entries for the H2A genes,
/// MiKDB phenotypes for the same symbols.
const JOINED: &str = "GeneSymbol,ProteinID,InfertilityData\nH2AX,P16104,Azoospermia\nH2AZ1,P0C0S5,Oligozoospermia\n";

fn bare(host: &str) -> String {
    let h = host.to_lowercase();
    h.strip_prefix("www.").unwrap_or(&h).to_string()
}

/// Refuses any host that is not served locally.
struct Guarded {
    inner: HttpFetcher,
    allowed: HashSet<String>,
    refused: Mutex<Vec<String>>,
    requests: Mutex<usize>,
}

impl Fetcher for Guarded {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, FetchError> {
        *self.requests.lock().unwrap() += 1;
        let host = request.url.host_str().map(bare).unwrap_or_default();
        if !self.allowed.contains(&host) {
            self.refused.lock().unwrap().push(request.url.to_string());
            return Err(FetchError::Transport {
                url: request.url.to_string(),
                detail: "external request refused".into(),
            });
        }
        self.inner.fetch(request)
    }
}

fn engine(fetcher: Arc<dyn Fetcher>) -> Result<Engine, String> {
    let mut parts = EngineParts::from_fixture_dir(&fixtures(), ProcessKB::new()).map_err(|e| e.to_string())?;
    parts.fetcher = fetcher;
    Ok(Engine::new(parts, EngineConfig::default(), Arc::new(MemoryStore::new())))
}

fn done(run: &Run) -> Result<(), String> {
    ensure(run.state == RunState::Done, || format!("run ended {:?}: {:?}", run.state, run.error))
}

pub fn fixture_end_to_end() -> Outcome {
    let web = FixtureWeb::load_dir(&fixtures().join("sites")).map_err(|e| e.to_string())?;
    let sites = BackgroundSites::start(&web, Duration::from_secs(5)).map_err(|e| e.to_string())?;
    let config = FetchConfig {
        politeness: Duration::ZERO,
        timeout: Duration::from_secs(2),
        ..FetchConfig::default()
    };
    let mut allowed = HashSet::new();
    let mut http = HttpFetcher::new(config);
    for (host, origin) in sites.rewrites() {
        allowed.insert(bare(&host));
        http = http.with_rewrite(&host, origin);
    }
    let guarded = Arc::new(Guarded {
        inner: http,
        allowed,
        refused: Mutex::new(Vec::new()),
        requests: Mutex::new(0),
    });
    let run = engine(guarded.clone())?.run_auto(Q, None).map_err(|e| e.to_string())?;
    done(&run)?;
    let refused = guarded.refused.lock().unwrap().clone();
    ensure(refused.is_empty(), || format!("external requests: {refused:?}"))?;
    let csv = run.result.as_ref().map(|t| t.to_delimited(b',')).unwrap_or_default();
    ensure(csv == JOINED, || format!("joined rows:\n{csv}"))?;
    let seen: Vec<Stage> = run.steps.iter().map(|s| s.stage).collect();
    let missing: Vec<&Stage> = Stage::LIFECYCLE.iter().filter(|s| !seen.contains(s)).collect();
    ensure(missing.is_empty(), || format!("stages missing: {missing:?}"))?;
    let requests = *guarded.requests.lock().unwrap();
    Ok(format!(
        "2 rows, 8 stages, {requests} local requests over {} sites, 0 external",
        sites.sites.len()
    ))
}

pub fn guided_matches_auto() -> Outcome {
    let web = FixtureWeb::load_dir(&fixtures().join("sites")).map_err(|e| e.to_string())?;
    let engine = engine(Arc::new(web))?;
    let auto = engine.run_auto(Q, None).map_err(|e| e.to_string())?;
    done(&auto)?;

    let mut guided = engine.run_guided(Q, None).map_err(|e| e.to_string())?;
    let mut choices = 0;
    while guided.state == RunState::AwaitingChoice {
        let request = guided.choice.clone().ok_or("awaiting without a choice")?;
        guided = engine
            .choose(&guided.id, request.default_option)
            .map_err(|e| e.to_string())?;
        choices += 1;
        ensure(choices <= 20, || "guided run does not finish".into())?;
    }
    done(&guided)?;
    ensure(choices > 0, || "guided run offered no choices".into())?;

    let (a, g) = (auto.result.as_ref().unwrap(), guided.result.as_ref().unwrap());
    ensure(a.to_delimited(b',') == g.to_delimited(b','), || {
        format!("csv differs:\n{}\n{}", a.to_delimited(b','), g.to_delimited(b','))
    })?;
    let (aj, gj) = (
        serde_json::to_string(&table_json(a)).unwrap(),
        serde_json::to_string(&table_json(g)).unwrap(),
    );
    ensure(aj == gj, || format!("json differs:\n{aj}\n{gj}"))?;
    ensure(auto.plan == guided.plan, || "plans differ".into())?;
    Ok(format!("{choices} default choices, identical csv and json"))
}
