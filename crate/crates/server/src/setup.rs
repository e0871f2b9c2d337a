//! Engine construction from command-line options.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use sourcebridge::assistant::{Assistant, FixtureAssistant, RemoteAssistant};
use sourcebridge::corpus::{ingest_corpus, Embedder, HashEmbedder, RemoteEmbedder};
use sourcebridge::engine::{EngineConfig, EngineParts};
use sourcebridge::keyword::{EutilsBackend, KeywordBackend, LocalBooleanBackend, DEFAULT_EUTILS_URL};
use sourcebridge::process::{ProcessKB, SharedKb};
use sourcebridge::schema::SynonymTable;
use sourcebridge::wrapper::{FetchConfig, Fetcher, FixtureWeb, HttpFetcher};
use sourcebridge::CorpusIndex;
use url::Url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// Hash embedder, rule-based assistant, keyword search over the corpus.
    Deterministic,
    /// Remote embedding and chat endpoints, PubMed keyword search.
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct EngineOptions {
    /// Fixture directory (corpus.jsonl, assistant.json, synonyms.json,
    /// sites/, kb/). Supplies defaults for the paths below.
    #[arg(long, global = true, env = "SOURCEBRIDGE_FIXTURES")]
    pub fixtures: Option<PathBuf>,
    /// Corpus as JSON lines, or an index written by `index build`.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Process description directory.
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub synonyms: Option<PathBuf>,
    /// Rules for the deterministic assistant.
    #[arg(long, global = true)]
    pub assistant_rules: Option<PathBuf>,
    /// Fixture sites answered in process instead of over the network.
    #[arg(long, global = true)]
    pub sites: Option<PathBuf>,
    /// Send requests for HOST to ORIGIN, as HOST=ORIGIN.
    #[arg(long = "rewrite", global = true, value_parser = parse_rewrite)]
    pub rewrites: Vec<(String, Url)>,
    #[arg(long, global = true, value_enum, default_value = "deterministic")]
    pub backend: Backend,
    #[arg(long, global = true, env = "SOURCEBRIDGE_EMBED_URL")]
    pub embed_url: Option<String>,
    #[arg(long, global = true, default_value = "text-embedding-3-small")]
    pub embed_model: String,
    #[arg(long, global = true, env = "SOURCEBRIDGE_LLM_URL")]
    pub llm_url: Option<String>,
    #[arg(long, global = true, default_value = "gpt-4o-mini")]
    pub llm_model: String,
    #[arg(long, global = true, env = "SOURCEBRIDGE_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long, global = true, default_value = DEFAULT_EUTILS_URL)]
    pub eutils_url: String,
    #[arg(long, global = true, env = "NCBI_API_KEY", hide_env_values = true)]
    pub eutils_key: Option<String>,
    /// Sources kept after ranking.
    #[arg(long, global = true, default_value_t = 4)]
    pub top_n: usize,
    /// Expanded queries per request.
    #[arg(short = 'k', long = "expansions", global = true, default_value_t = 5)]
    pub k: usize,
    /// Smallest keyword combination searched.
    #[arg(short = 'L', long = "min-combination", global = true, default_value_t = 2)]
    pub min_combination: usize,
    /// Keyword queries allowed per search.
    #[arg(long, global = true, default_value_t = 64)]
    pub search_budget: usize,
    /// Minimum link relevance kept by the wrapper.
    #[arg(long, global = true, default_value_t = 0.15)]
    pub link_threshold: f64,
    /// Guided session timeout in seconds.
    #[arg(long, global = true, default_value_t = 1800)]
    pub guided_timeout: u64,
    /// Minimum milliseconds between requests to one host.
    #[arg(long, global = true, default_value_t = 500)]
    pub politeness_ms: u64,
    /// Store a process description for every wrapped source.
    #[arg(long, global = true)]
    pub learn: bool,
    /// Ask for confirmation of each extracted table.
    #[arg(long, global = true)]
    pub confirm_tables: bool,
}

fn parse_rewrite(s: &str) -> Result<(String, Url), String> {
    let (host, origin) = s.split_once('=').ok_or("expected HOST=ORIGIN")?;
    let origin = Url::parse(origin).map_err(|e| format!("{origin}: {e}"))?;
    Ok((host.to_string(), origin))
}

impl EngineOptions {
    fn fixture_path(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.fixtures.as_ref().map(|f| f.join(name)).filter(|p| p.exists()))
    }

    pub fn corpus_path(&self) -> Option<PathBuf> {
        self.fixture_path(&self.corpus, "corpus.jsonl")
    }

    pub fn kb_path(&self) -> Option<PathBuf> {
        self.fixture_path(&self.kb, "kb")
    }

    pub fn fetch_config(&self) -> FetchConfig {
        FetchConfig {
            politeness: Duration::from_millis(self.politeness_ms),
            ..FetchConfig::default()
        }
    }

    pub fn config(&self) -> EngineConfig {
        let mut c = EngineConfig::default();
        c.query.k = self.k;
        c.rank.cut = self.top_n;
        c.search.min_size = self.min_combination;
        c.search.budget = self.search_budget;
        c.wrap.threshold = self.link_threshold;
        c.guided_timeout = Duration::from_secs(self.guided_timeout);
        c.source_options = self.top_n;
        c.learn = self.learn;
        c.confirm_tables = self.confirm_tables;
        c
    }

    pub fn synonyms(&self) -> Result<SynonymTable> {
        match self.fixture_path(&self.synonyms, "synonyms.json") {
            Some(p) => SynonymTable::load(&p).with_context(|| format!("reading {}", p.display())),
            None => Ok(SynonymTable::builtin()),
        }
    }

    pub fn open_kb(&self, synonyms: &SynonymTable) -> Result<ProcessKB> {
        match self.kb_path() {
            Some(dir) => ProcessKB::open(&dir, synonyms).with_context(|| format!("opening kb {}", dir.display())),
            None => Ok(ProcessKB::new()),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match self.backend {
            Backend::Deterministic => Arc::new(HashEmbedder::default()),
            Backend::Remote => {
                let url = self.embed_url.clone().context("--embed-url is required with --backend remote")?;
                Arc::new(RemoteEmbedder::new(url, &self.embed_model, self.api_key.clone()))
            }
        })
    }

    fn assistant(&self) -> Result<Arc<dyn Assistant>> {
        Ok(match self.backend {
            Backend::Deterministic => match self.fixture_path(&self.assistant_rules, "assistant.json") {
                Some(p) => Arc::new(FixtureAssistant::from_file(&p).with_context(|| format!("reading {}", p.display()))?),
                None => Arc::new(FixtureAssistant::identity()),
            },
            Backend::Remote => {
                let url = self.llm_url.clone().context("--llm-url is required with --backend remote")?;
                Arc::new(RemoteAssistant::new(url, &self.llm_model, self.api_key.clone()))
            }
        })
    }

    fn fetcher(&self) -> Result<Arc<dyn Fetcher>> {
        if let Some(dir) = self.fixture_path(&self.sites, "sites").filter(|_| self.rewrites.is_empty()) {
            let web = FixtureWeb::load_dir(&dir).with_context(|| format!("loading sites {}", dir.display()))?;
            return Ok(Arc::new(web));
        }
        let http = self
            .rewrites
            .iter()
            .fold(HttpFetcher::new(self.fetch_config()), |f, (host, origin)| {
                f.with_rewrite(host, origin.clone())
            });
        Ok(Arc::new(http))
    }

    pub fn load_index(&self, embedder: &dyn Embedder) -> Result<CorpusIndex> {
        let Some(path) = self.corpus_path() else {
            bail!("no corpus: pass --corpus or --fixtures");
        };
        load_index(&path, embedder)
    }

    pub fn parts(&self) -> Result<EngineParts> {
        let synonyms = self.synonyms()?;
        let kb = self.open_kb(&synonyms)?;
        let embedder = self.embedder()?;
        let index = Arc::new(self.load_index(&*embedder)?);
        let keywords: Arc<dyn KeywordBackend> = match self.backend {
            Backend::Deterministic => Arc::new(LocalBooleanBackend::new(&index)),
            Backend::Remote => Arc::new(EutilsBackend::new(&self.eutils_url, self.eutils_key.clone(), 20)),
        };
        Ok(EngineParts {
            index,
            embedder,
            assistant: self.assistant()?,
            keywords,
            fetcher: self.fetcher()?,
            kb: SharedKb::new(kb),
            synonyms,
        })
    }
}

/// Reads a saved index (`.json`) or embeds a JSON-lines corpus. A saved
/// index must have been built by the same embedder.
pub fn load_index(path: &Path, embedder: &dyn Embedder) -> Result<CorpusIndex> {
    if path.extension().is_some_and(|e| e == "json") {
        let index = CorpusIndex::load(path).with_context(|| format!("loading index {}", path.display()))?;
        if index.embedder_id() != embedder.id() {
            bail!(
                "{} was built with `{}`, not `{}`",
                path.display(),
                index.embedder_id(),
                embedder.id()
            );
        }
        return Ok(index);
    }
    let ingested = ingest_corpus(path, embedder, workers()).with_context(|| format!("indexing {}", path.display()))?;
    if !ingested.rejections.is_empty() {
        tracing::warn!(count = ingested.rejections.len(), "corpus records rejected");
    }
    Ok(ingested.index)
}

pub fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}
