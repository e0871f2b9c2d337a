//! Run orchestration: the automatic pipeline, guided sessions with choice
//! points, forks, replays and follow-up queries.
//!
//! A run moves `pending → (awaiting_choice ↔ executing)* → done | failed`.
//! Every stage appends a [`StepEvent`]; the run is persisted after each one,
//! so readers polling the store always see a complete prefix of the log.

mod pipeline;
mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assistant::{Assistant, FixtureAssistant};
use crate::bioflow::Registry;
use crate::corpus::{ingest_corpus, CorpusIndex, Embedder, HashEmbedder};
use crate::keyword::{KeywordBackend, LocalBooleanBackend, SearchConfig};
use crate::process::{ProcessKB, SharedKb};
use crate::query::QueryConfig;
use crate::resources::RankConfig;
use crate::schema::SynonymTable;
use crate::table::DataTable;
use crate::wrapper::{Fetcher, FixtureWeb, WrapConfig};

pub use pipeline::Checkpoint;
pub use store::{FileStore, MemoryStore, RunStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Auto,
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    AwaitingChoice,
    Executing,
    Done,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Done | RunState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    QueryProcessed,
    SourcesRanked,
    ResourceChosen,
    LinksFiltered,
    LinkChosen,
    TableExtracted,
    PlanCompiled,
    PlanExecuted,
    /// Logged when a guided run pauses for a choice.
    AwaitingChoice,
}

impl Stage {
    pub const LIFECYCLE: [Stage; 8] = [
        Stage::QueryProcessed,
        Stage::SourcesRanked,
        Stage::ResourceChosen,
        Stage::LinksFiltered,
        Stage::LinkChosen,
        Stage::TableExtracted,
        Stage::PlanCompiled,
        Stage::PlanExecuted,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub seq: usize,
    pub stage: Stage,
    pub payload: serde_json::Value,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceKind {
    Source,
    Link,
    ConfirmTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceOption {
    /// 1-based.
    pub id: usize,
    pub label: String,
    pub summary: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRequest {
    pub run_id: String,
    pub kind: ChoiceKind,
    pub options: Vec<ChoiceOption>,
    /// The option the automatic mode takes.
    pub default_option: usize,
    pub created_at: DateTime<Utc>,
}

/// A decision taken during a run, by the user or automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoicePoint {
    pub request: ChoiceRequest,
    pub selected: Option<usize>,
    /// Length of the step log when the choice was offered.
    pub steps_before: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunErrorKind {
    InvalidQuery,
    NoCandidates,
    Assistant,
    Embedding,
    Index,
    NoTables,
    Compile,
    SourceFailed,
    SessionExpired,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub kind: RunErrorKind,
    pub stage: Option<Stage>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub id: String,
    pub mode: Mode,
    pub query: String,
    pub knowledge: Option<String>,
    pub state: RunState,
    pub steps: Vec<StepEvent>,
    /// The outstanding choice while awaiting one.
    pub choice: Option<ChoiceRequest>,
    pub result: Option<DataTable>,
    pub error: Option<RunError>,
    /// The executed integration query, rendered.
    pub plan: Option<String>,
    /// Run this one was forked or replayed from, or the follow-up base.
    pub parent: Option<String>,
    /// Base run of a follow-up.
    pub base: Option<String>,
    pub choices: Vec<ChoicePoint>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// A run with the checkpoints needed to resume or fork it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredRun {
    pub run: Run,
    checkpoint: Checkpoint,
    /// Checkpoint at each choice point, parallel to `run.choices`.
    snapshots: Vec<Checkpoint>,
}

impl StoredRun {
    pub(crate) fn new(mode: Mode, query: String, knowledge: Option<String>) -> Self {
        let now = Utc::now();
        StoredRun {
            run: Run {
                id: uuid::Uuid::new_v4().to_string(),
                mode,
                query,
                knowledge,
                state: RunState::Pending,
                steps: Vec::new(),
                choice: None,
                result: None,
                error: None,
                plan: None,
                parent: None,
                base: None,
                choices: Vec::new(),
                created_at: now,
                updated_at: now,
            },
            checkpoint: Checkpoint::default(),
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub query: QueryConfig,
    pub search: SearchConfig,
    pub rank: RankConfig,
    pub wrap: WrapConfig,
    /// Guided runs waiting longer than this fail with `session_expired`.
    pub guided_timeout: Duration,
    /// Sources offered at the source choice.
    pub source_options: usize,
    /// Store a process description induced from each wrapped table.
    pub learn: bool,
    /// Add a choice point confirming each extracted table.
    pub confirm_tables: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            query: QueryConfig::default(),
            search: SearchConfig::default(),
            rank: RankConfig::default(),
            wrap: WrapConfig::default(),
            guided_timeout: Duration::from_secs(30 * 60),
            source_options: 4,
            learn: false,
            confirm_tables: false,
        }
    }
}

/// Backends and knowledge an engine works with.
#[derive(Clone)]
pub struct EngineParts {
    pub index: Arc<CorpusIndex>,
    pub embedder: Arc<dyn Embedder>,
    pub assistant: Arc<dyn Assistant>,
    pub keywords: Arc<dyn KeywordBackend>,
    pub fetcher: Arc<dyn Fetcher>,
    pub kb: SharedKb,
    pub synonyms: SynonymTable,
}

#[derive(Debug, Error)]
#[error("{path}: {detail}")]
pub struct FixtureLoadError {
    pub path: PathBuf,
    pub detail: String,
}

impl EngineParts {
    /// Fully offline parts from a fixture directory: `corpus.jsonl` under the
    /// hash embedder, `assistant.json` rules, the sites under `sites/`,
    /// `synonyms.json` when present, and keyword search over the corpus.
    pub fn from_fixture_dir(root: &Path, kb: ProcessKB) -> Result<Self, FixtureLoadError> {
        let err = |path: PathBuf| move |e: &dyn std::fmt::Display| FixtureLoadError { path, detail: e.to_string() };
        let synonyms_path = root.join("synonyms.json");
        let synonyms = if synonyms_path.is_file() {
            SynonymTable::load(&synonyms_path).map_err(|e| err(synonyms_path.clone())(&e))?
        } else {
            SynonymTable::builtin()
        };
        let embedder = HashEmbedder::default();
        let corpus = root.join("corpus.jsonl");
        let ingested = ingest_corpus(&corpus, &embedder, 1).map_err(|e| err(corpus.clone())(&e))?;
        let index = Arc::new(ingested.index);
        let assistant_path = root.join("assistant.json");
        let assistant = FixtureAssistant::from_file(&assistant_path).map_err(|e| err(assistant_path.clone())(&e))?;
        let sites = root.join("sites");
        let web = FixtureWeb::load_dir(&sites).map_err(|e| err(sites.clone())(&e))?;
        Ok(EngineParts {
            keywords: Arc::new(LocalBooleanBackend::new(&index)),
            index,
            embedder: Arc::new(embedder),
            assistant: Arc::new(assistant),
            fetcher: Arc::new(web),
            kb: SharedKb::new(kb),
            synonyms,
        })
    }
}

/// Rejected requests; run failures are recorded in the run instead.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no run `{0}`")]
    NotFound(String),
    #[error("run `{id}` is {state:?}, not awaiting a choice")]
    NotAwaitingChoice { id: String, state: RunState },
    #[error("run `{0}` is executing")]
    Busy(String),
    #[error("option {option} not offered (1..={available})")]
    UnknownOption { option: usize, available: usize },
    #[error("run has no choice point {point} ({available} recorded)")]
    UnknownChoicePoint { point: usize, available: usize },
    #[error("run `{id}` is {state:?}; forks need a finished run")]
    NotFinished { id: String, state: RunState },
    #[error("base run `{id}` is {state:?}; follow-ups need a done run")]
    BaseNotDone { id: String, state: RunState },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl EngineError {
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::NotFound(_) => "not_found",
            EngineError::NotAwaitingChoice { .. } | EngineError::NotFinished { .. } | EngineError::BaseNotDone { .. } => {
                "state"
            }
            EngineError::Busy(_) => "busy",
            EngineError::UnknownOption { .. } | EngineError::UnknownChoicePoint { .. } => "unknown_option",
            EngineError::Store(_) => "store",
        }
    }
}

pub struct Engine {
    parts: EngineParts,
    config: EngineConfig,
    registry: Registry,
    store: Arc<dyn RunStore>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Engine {
    pub fn new(parts: EngineParts, config: EngineConfig, store: Arc<dyn RunStore>) -> Self {
        Self {
            parts,
            config,
            registry: Registry::default(),
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn parts(&self) -> &EngineParts {
        &self.parts
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    fn lock_of(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_string()).or_default().clone()
    }

    fn load(&self, id: &str) -> Result<StoredRun, EngineError> {
        self.store.get(id)?.ok_or_else(|| EngineError::NotFound(id.to_string()))
    }

    fn save(&self, stored: &mut StoredRun) -> Result<(), EngineError> {
        stored.run.updated_at = Utc::now();
        self.store.put(stored)?;
        Ok(())
    }

    /// Fails a run whose outstanding choice is older than the timeout.
    /// Returns whether it did.
    fn expire(&self, stored: &mut StoredRun) -> Result<bool, EngineError> {
        let Some(choice) = &stored.run.choice else {
            return Ok(false);
        };
        let age = Utc::now().signed_duration_since(choice.created_at);
        let limit = chrono::Duration::from_std(self.config.guided_timeout).unwrap_or(chrono::Duration::MAX);
        if stored.run.state != RunState::AwaitingChoice || age <= limit {
            return Ok(false);
        }
        tracing::info!(run = %stored.run.id, "guided session expired");
        stored.run.choice = None;
        stored.run.state = RunState::Failed;
        stored.run.error = Some(RunError {
            kind: RunErrorKind::SessionExpired,
            stage: None,
            message: format!("no choice within {:?}", self.config.guided_timeout),
            detail: None,
        });
        self.save(stored)?;
        Ok(true)
    }

    /// The run, after applying the session timeout.
    pub fn get(&self, id: &str) -> Result<Run, EngineError> {
        let lock = self.lock_of(id);
        let Some(_guard) = lock.try_lock() else {
            return Ok(self.load(id)?.run);
        };
        let mut stored = self.load(id)?;
        self.expire(&mut stored)?;
        Ok(stored.run)
    }

    /// All runs, oldest first.
    pub fn list(&self) -> Result<Vec<Run>, EngineError> {
        let mut runs = Vec::new();
        for id in self.store.ids()? {
            if let Some(s) = self.store.get(&id)? {
                runs.push(s.run);
            }
        }
        runs.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(runs)
    }

    /// Expires every stale guided session; returns how many.
    pub fn expire_stale(&self) -> Result<usize, EngineError> {
        let mut n = 0;
        for id in self.store.ids()? {
            let lock = self.lock_of(&id);
            let Some(_guard) = lock.try_lock() else { continue };
            let mut stored = self.load(&id)?;
            if self.expire(&mut stored)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Creates a pending run; [`Engine::advance`] executes it.
    pub fn start(&self, mode: Mode, query: &str, knowledge: Option<&str>) -> Result<Run, EngineError> {
        let knowledge = knowledge.map(str::trim).filter(|k| !k.is_empty()).map(str::to_string);
        let mut stored = StoredRun::new(mode, query.to_string(), knowledge);
        self.save(&mut stored)?;
        tracing::info!(run = %stored.run.id, ?mode, "run created");
        Ok(stored.run)
    }

    /// Executes a pending or resumed run until it finishes or pauses for a
    /// choice.
    pub fn advance(&self, id: &str) -> Result<Run, EngineError> {
        let lock = self.lock_of(id);
        let _guard = lock.lock();
        let mut stored = self.load(id)?;
        if !matches!(stored.run.state, RunState::Pending | RunState::Executing) {
            return Ok(stored.run);
        }
        stored.run.state = RunState::Executing;
        self.save(&mut stored)?;
        pipeline::drive(self, &mut stored)?;
        Ok(stored.run)
    }

    pub fn run_auto(&self, query: &str, knowledge: Option<&str>) -> Result<Run, EngineError> {
        let run = self.start(Mode::Auto, query, knowledge)?;
        self.advance(&run.id)
    }

    /// Starts a guided run; it returns at the first choice point.
    pub fn run_guided(&self, query: &str, knowledge: Option<&str>) -> Result<Run, EngineError> {
        let run = self.start(Mode::Guided, query, knowledge)?;
        self.advance(&run.id)
    }

    /// Records the answer to the outstanding choice. The run is left
    /// `executing`; [`Engine::advance`] resumes it.
    pub fn submit_choice(&self, id: &str, option: usize) -> Result<Run, EngineError> {
        let lock = self.lock_of(id);
        let Some(_guard) = lock.try_lock() else {
            return Err(EngineError::Busy(id.to_string()));
        };
        let mut stored = self.load(id)?;
        self.expire(&mut stored)?;
        let Some(choice) = stored.run.choice.clone().filter(|_| stored.run.state == RunState::AwaitingChoice) else {
            return Err(EngineError::NotAwaitingChoice {
                id: id.to_string(),
                state: stored.run.state,
            });
        };
        if option == 0 || option > choice.options.len() {
            return Err(EngineError::UnknownOption {
                option,
                available: choice.options.len(),
            });
        }
        if let Some(point) = stored.run.choices.last_mut() {
            point.selected = Some(option);
        }
        stored.checkpoint.pending = Some(option);
        stored.run.choice = None;
        stored.run.state = RunState::Executing;
        self.save(&mut stored)?;
        Ok(stored.run)
    }

    /// [`Engine::submit_choice`] followed by [`Engine::advance`].
    pub fn choose(&self, id: &str, option: usize) -> Result<Run, EngineError> {
        self.submit_choice(id, option)?;
        self.advance(id)
    }

    /// A new run that copies `id`'s log up to choice point `point` (0-based)
    /// and takes `option` there instead. Left `executing`.
    pub fn fork(&self, id: &str, point: usize, option: usize) -> Result<Run, EngineError> {
        let parent = self.load(id)?;
        if !parent.run.state.is_terminal() {
            return Err(EngineError::NotFinished {
                id: id.to_string(),
                state: parent.run.state,
            });
        }
        let Some(cp) = parent.run.choices.get(point) else {
            return Err(EngineError::UnknownChoicePoint {
                point,
                available: parent.run.choices.len(),
            });
        };
        if option == 0 || option > cp.request.options.len() {
            return Err(EngineError::UnknownOption {
                option,
                available: cp.request.options.len(),
            });
        }
        let mut child = StoredRun::new(parent.run.mode, parent.run.query.clone(), parent.run.knowledge.clone());
        child.run.parent = Some(parent.run.id.clone());
        child.run.base = parent.run.base.clone();
        child.run.steps = parent.run.steps[..cp.steps_before].to_vec();
        child.run.choices = parent.run.choices[..=point].to_vec();
        child.snapshots = parent.snapshots[..=point].to_vec();
        let new_id = child.run.id.clone();
        if let Some(last) = child.run.choices.last_mut() {
            last.selected = Some(option);
            last.request.run_id = new_id;
        }
        child.checkpoint = parent.snapshots[point].clone();
        child.checkpoint.pending = Some(option);
        child.run.state = RunState::Executing;
        self.save(&mut child)?;
        tracing::info!(run = %child.run.id, parent = %id, point, option, "run forked");
        Ok(child.run)
    }

    /// [`Engine::fork`] followed by [`Engine::advance`].
    pub fn rechoose(&self, id: &str, point: usize, option: usize) -> Result<Run, EngineError> {
        let run = self.fork(id, point, option)?;
        self.advance(&run.id)
    }

    /// Re-executes a finished run from scratch, taking the recorded choices.
    pub fn replay(&self, id: &str) -> Result<Run, EngineError> {
        let parent = self.load(id)?;
        if !parent.run.state.is_terminal() {
            return Err(EngineError::NotFinished {
                id: id.to_string(),
                state: parent.run.state,
            });
        }
        let mut child = StoredRun::new(parent.run.mode, parent.run.query.clone(), parent.run.knowledge.clone());
        child.run.parent = Some(parent.run.id.clone());
        child.run.base = parent.run.base.clone();
        child.checkpoint = Checkpoint::replaying(&parent);
        self.save(&mut child)?;
        self.advance(&child.run.id)
    }

    /// Creates a follow-up run over the result of `base_id`:
    ///
    /// * `select ...` is an integration query; `run://<id>` names a run's result;
    /// * `where ...` filters the base result;
    /// * anything else is a request for more sources, joined with the base.
    pub fn followup(&self, base_id: &str, text: &str) -> Result<Run, EngineError> {
        let base = self.load(base_id)?;
        let Some(table) = base.run.result.clone().filter(|_| base.run.state == RunState::Done) else {
            return Err(EngineError::BaseNotDone {
                id: base_id.to_string(),
                state: base.run.state,
            });
        };
        let mut stored = StoredRun::new(Mode::Auto, text.to_string(), base.run.knowledge.clone());
        stored.run.parent = Some(base_id.to_string());
        stored.run.base = Some(base_id.to_string());
        stored.checkpoint = Checkpoint::followup(&base, table, text);
        self.save(&mut stored)?;
        Ok(stored.run)
    }

    /// [`Engine::followup`] followed by [`Engine::advance`].
    pub fn run_followup(&self, base_id: &str, text: &str) -> Result<Run, EngineError> {
        let run = self.followup(base_id, text)?;
        self.advance(&run.id)
    }

    pub(crate) fn result_of(&self, id: &str) -> Option<DataTable> {
        self.store
            .get(id)
            .ok()
            .flatten()
            .filter(|s| s.run.state == RunState::Done)
            .and_then(|s| s.run.result)
    }
}

#[cfg(test)]
mod tests;
