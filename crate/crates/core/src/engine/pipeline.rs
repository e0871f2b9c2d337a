//! The staged run pipeline and its resumable state.

use std::collections::VecDeque;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ChoiceKind, ChoiceOption, ChoicePoint, ChoiceRequest, Engine, EngineError, Mode, RunError, RunErrorKind,
    RunState, Stage, StepEvent, StoredRun,
};
use crate::bioflow::{
    compile_plan, execute, parse_bioflow, render_bioflow, source_alias, BioFlowQuery, ExecError, ExtractClause,
    LiveSource, Materialized, MemorySource, Select, SourceError, TableSource, WithClause, DEFAULT_MATCHER,
    DEFAULT_WRAPPER,
};
use crate::process::{identifier, induce_pd, run_pd};
use crate::query::{process_query, QueryBundle, QueryError};
use crate::resources::{identify_resources, rank_candidates, RankedDoc, ResourceDescriptor, ResourceError};
use crate::table::DataTable;
use crate::text::normalize_name;
use crate::wrapper::{discover, try_candidates, Discovery, WrapContext, WrapOutcome};

const SUMMARY_CHARS: usize = 240;
const PREVIEW_ROWS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Phase {
    #[default]
    Start,
    ChooseSource,
    Wrap,
    ChooseLink,
    ConfirmTable,
    Compile,
    Finished,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Extracted {
    resource: ResourceDescriptor,
    table: DataTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaseInput {
    id: String,
    table: DataTable,
}

/// Where a run is in the pipeline and what it has produced so far.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Checkpoint {
    phase: Phase,
    bundle: Option<QueryBundle>,
    ranked: Vec<RankedDoc>,
    /// Resources identified from the whole ranking.
    auto_resources: Vec<ResourceDescriptor>,
    warnings: Vec<String>,
    /// Resources being wrapped, after the source choice.
    resources: Vec<ResourceDescriptor>,
    next: usize,
    discovery: Option<Discovery>,
    extracted: Vec<Extracted>,
    unconfirmed: Option<Extracted>,
    failed: Vec<Value>,
    /// Answer to the most recent choice point, not yet applied.
    pub(super) pending: Option<usize>,
    /// Answers taken without asking, in order (replays).
    preset: VecDeque<usize>,
    base: Option<BaseInput>,
    /// Integration query text of a follow-up.
    plan_text: Option<String>,
}

impl Checkpoint {
    fn initial(base: Option<BaseInput>, plan_text: Option<String>) -> Self {
        Checkpoint {
            phase: if plan_text.is_some() { Phase::Compile } else { Phase::Start },
            base,
            plan_text,
            ..Checkpoint::default()
        }
    }

    pub(super) fn replaying(parent: &StoredRun) -> Self {
        let mut c = Checkpoint::initial(parent.checkpoint.base.clone(), parent.checkpoint.plan_text.clone());
        c.preset = parent.run.choices.iter().map_while(|p| p.selected).collect();
        c
    }

    /// Text follow-ups search live sources with the base run's term.
    pub(super) fn followup(base: &StoredRun, table: DataTable, text: &str) -> Self {
        let base_id = base.run.id.as_str();
        let trimmed = text.trim();
        let head = trimmed.split_whitespace().next().unwrap_or("").to_lowercase();
        let plan_text = match head.as_str() {
            "select" => Some(trimmed.to_string()),
            "where" => Some(filter_plan(base_id, &table, trimmed)),
            _ => None,
        };
        let mut c = Checkpoint::initial(
            Some(BaseInput {
                id: base_id.to_string(),
                table,
            }),
            plan_text,
        );
        c.bundle = base.checkpoint.bundle.clone();
        c
    }
}

/// `where ...` over the base result: a single pass-through clause.
fn filter_plan(base_id: &str, table: &DataTable, predicates: &str) -> String {
    let names = table.column_names();
    let key = names
        .iter()
        .find(|n| identifier(n) == **n)
        .or(names.first())
        .map(|n| identifier(n))
        .unwrap_or_else(|| "Column".into());
    format!("select * from (with base as (extract {key} from run://{base_id} submit base)) {predicates}")
}

fn run_url(id: &str) -> String {
    format!("run://{id}")
}

fn truncate(text: &str, max: usize) -> String {
    let mut out: String = text.chars().take(max).collect();
    if text.chars().count() > max {
        out.push('…');
    }
    out
}

fn table_summary(t: &DataTable) -> Value {
    json!({
        "columns": t.column_names(),
        "types": t.columns.iter().map(|c| c.ty.to_string()).collect::<Vec<_>>(),
        "rows": t.rows.len(),
        "method": t.provenance.method.as_str(),
        "source_url": t.provenance.source_url,
        "preview": t.rows.iter().take(PREVIEW_ROWS)
            .map(|r| r.iter().map(|c| c.render()).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    })
}

fn query_error_kind(e: &QueryError) -> RunErrorKind {
    match e {
        QueryError::EmptyQuery | QueryError::NoKeywords | QueryError::InvalidK => RunErrorKind::InvalidQuery,
        QueryError::MixedBackends { .. } | QueryError::Embed(_) => RunErrorKind::Embedding,
        QueryError::Assistant(_) => RunErrorKind::Assistant,
        QueryError::Index(_) => RunErrorKind::Index,
    }
}

fn resource_error_kind(e: &ResourceError) -> RunErrorKind {
    match e {
        ResourceError::NoCandidates => RunErrorKind::NoCandidates,
        ResourceError::MixedBackends { .. } | ResourceError::Embed(_) | ResourceError::Similarity(_) => {
            RunErrorKind::Embedding
        }
        ResourceError::Assistant(_) => RunErrorKind::Assistant,
        ResourceError::Index(_) => RunErrorKind::Index,
    }
}

enum Flow {
    Continue,
    Stop,
}

enum Decision {
    Take(usize),
    Pause,
}

struct Driver<'e> {
    engine: &'e Engine,
    stored: &'e mut StoredRun,
}

/// Runs stages until the run finishes or pauses.
pub(super) fn drive(engine: &Engine, stored: &mut StoredRun) -> Result<(), EngineError> {
    let mut d = Driver { engine, stored };
    loop {
        let flow = match d.stored.checkpoint.phase {
            Phase::Start => d.start()?,
            Phase::ChooseSource => d.choose_source()?,
            Phase::Wrap => d.wrap()?,
            Phase::ChooseLink => d.choose_link()?,
            Phase::ConfirmTable => d.confirm_table()?,
            Phase::Compile => d.compile()?,
            Phase::Finished => Flow::Stop,
        };
        if let Flow::Stop = flow {
            return Ok(());
        }
    }
}

impl Driver<'_> {
    fn ctx(&self) -> WrapContext<'_> {
        let p = &self.engine.parts;
        WrapContext {
            fetcher: &*p.fetcher,
            embedder: &*p.embedder,
            assistant: &*p.assistant,
            config: self.engine.config.wrap,
        }
    }

    fn bundle(&self) -> QueryBundle {
        self.stored
            .checkpoint
            .bundle
            .clone()
            .unwrap_or_else(|| QueryBundle::for_term(&self.stored.run.query))
    }

    fn save(&mut self) -> Result<(), EngineError> {
        self.engine.save(self.stored)
    }

    fn step(&mut self, stage: Stage, payload: Value) -> Result<(), EngineError> {
        let seq = self.stored.run.steps.len();
        tracing::debug!(run = %self.stored.run.id, ?stage, "step");
        self.stored.run.steps.push(StepEvent {
            seq,
            stage,
            payload,
            timestamp: Utc::now(),
        });
        self.save()
    }

    fn fail(&mut self, kind: RunErrorKind, stage: Stage, message: String, detail: Option<Value>) -> Result<Flow, EngineError> {
        tracing::info!(run = %self.stored.run.id, ?kind, ?stage, %message, "run failed");
        self.stored.run.state = RunState::Failed;
        self.stored.run.error = Some(RunError {
            kind,
            stage: Some(stage),
            message,
            detail,
        });
        self.stored.checkpoint.phase = Phase::Finished;
        self.save()?;
        Ok(Flow::Stop)
    }

    /// Takes the pending answer, a preset, or the default (automatic mode);
    /// otherwise records the request and pauses.
    fn decide(&mut self, kind: ChoiceKind, options: Vec<ChoiceOption>, default: usize) -> Result<Decision, EngineError> {
        if let Some(sel) = self.stored.checkpoint.pending.take() {
            return Ok(Decision::Take(sel));
        }
        let request = ChoiceRequest {
            run_id: self.stored.run.id.clone(),
            kind,
            default_option: default,
            created_at: Utc::now(),
            options,
        };
        let mut snapshot = self.stored.checkpoint.clone();
        snapshot.preset.clear();
        let preset = self
            .stored
            .checkpoint
            .preset
            .pop_front()
            .filter(|&p| p >= 1 && p <= request.options.len());
        let selected = preset.or((self.stored.run.mode == Mode::Auto).then_some(default));
        self.stored.run.choices.push(ChoicePoint {
            request: request.clone(),
            selected,
            steps_before: self.stored.run.steps.len(),
        });
        self.stored.snapshots.push(snapshot);
        match selected {
            Some(s) => Ok(Decision::Take(s)),
            None => {
                let payload = json!({
                    "kind": kind,
                    "options": request.options,
                    "default_option": default,
                });
                self.stored.run.choice = Some(request);
                self.stored.run.state = RunState::AwaitingChoice;
                self.step(Stage::AwaitingChoice, payload)?;
                Ok(Decision::Pause)
            }
        }
    }

    fn start(&mut self) -> Result<Flow, EngineError> {
        let p = &self.engine.parts;
        let cfg = &self.engine.config;
        let run = &self.stored.run;
        let knowledge = run.knowledge.clone();
        let bundle = match process_query(&run.query, knowledge.as_deref(), &*p.assistant, &p.index, &*p.embedder, cfg.query) {
            Ok(b) => b,
            Err(e) => return self.fail(query_error_kind(&e), Stage::QueryProcessed, e.to_string(), None),
        };
        self.step(Stage::QueryProcessed, json!({ "bundle": bundle }))?;

        let ranking = match rank_candidates(&bundle, &p.index, &*p.embedder, &*p.keywords, cfg.search, cfg.rank) {
            Ok(r) => r,
            Err(e) => return self.fail(resource_error_kind(&e), Stage::SourcesRanked, e.to_string(), None),
        };
        let keyword = ranking.keyword_trace.as_ref().map(|t| {
            json!({
                "issued": t.issued.iter().map(|q| &q.query).collect::<Vec<_>>(),
                "hit": t.result.as_ref().map(|r| &r.issued_query),
                "records": t.result.as_ref().map_or(0, |r| r.records.len()),
                "budget_exhausted": t.budget_exhausted,
            })
        });
        self.step(
            Stage::SourcesRanked,
            json!({
                "merged": ranking.merged,
                "ranked": ranking.ranked.iter().enumerate().map(|(i, r)| json!({
                    "rank": i + 1,
                    "doc_id": r.doc.id,
                    "title": r.doc.title,
                    "link": r.doc.access_link,
                    "score": r.score,
                    "external": r.external,
                })).collect::<Vec<_>>(),
                "keyword_search": keyword,
                "keyword_error": ranking.keyword_error,
            }),
        )?;

        let ident = match identify_resources(
            &self.stored.run.query,
            &bundle.retrieval_query,
            knowledge.as_deref(),
            &ranking.ranked,
            &*p.assistant,
        ) {
            Ok(i) => i,
            Err(e) => return self.fail(resource_error_kind(&e), Stage::SourcesRanked, e.to_string(), None),
        };
        if ident.resources.is_empty() {
            return self.fail(
                RunErrorKind::NoCandidates,
                Stage::SourcesRanked,
                "no data source identified in the ranked papers".into(),
                Some(json!({ "warnings": ident.warnings })),
            );
        }
        let c = &mut self.stored.checkpoint;
        c.bundle = Some(bundle);
        c.ranked = ranking.ranked;
        c.auto_resources = ident.resources;
        c.warnings = ident.warnings;
        c.phase = Phase::ChooseSource;
        Ok(Flow::Continue)
    }

    fn choose_source(&mut self) -> Result<Flow, EngineError> {
        let c = &self.stored.checkpoint;
        let options: Vec<ChoiceOption> = c
            .ranked
            .iter()
            .take(self.engine.config.source_options.max(1))
            .enumerate()
            .map(|(i, r)| {
                let sources: Vec<&str> = c
                    .auto_resources
                    .iter()
                    .filter(|s| s.origin_doc.as_deref() == Some(&r.doc.id))
                    .map(|s| s.source_name.as_str())
                    .collect();
                ChoiceOption {
                    id: i + 1,
                    label: r.doc.title.clone(),
                    summary: truncate(&r.doc.abstract_text, SUMMARY_CHARS),
                    detail: json!({
                        "doc_id": r.doc.id,
                        "link": r.doc.access_link,
                        "score": r.score,
                        "sources": sources,
                    }),
                }
            })
            .collect();
        let default = c
            .auto_resources
            .first()
            .and_then(|r| r.origin_doc.as_ref())
            .and_then(|id| c.ranked.iter().take(options.len()).position(|d| &d.doc.id == id))
            .map_or(1, |i| i + 1);
        let chosen = match self.decide(ChoiceKind::Source, options, default)? {
            Decision::Take(i) => i,
            Decision::Pause => return Ok(Flow::Stop),
        };

        let c = &self.stored.checkpoint;
        let (resources, warnings) = if chosen == default {
            (c.auto_resources.clone(), c.warnings.clone())
        } else {
            let bundle = self.bundle();
            let doc = &c.ranked[chosen - 1..chosen];
            match identify_resources(
                &self.stored.run.query,
                &bundle.retrieval_query,
                self.stored.run.knowledge.as_deref(),
                doc,
                &*self.engine.parts.assistant,
            ) {
                Ok(i) if !i.resources.is_empty() => (i.resources, i.warnings),
                Ok(i) => {
                    return self.fail(
                        RunErrorKind::NoCandidates,
                        Stage::ResourceChosen,
                        "the chosen paper describes no usable data source".into(),
                        Some(json!({ "warnings": i.warnings })),
                    )
                }
                Err(e) => return self.fail(resource_error_kind(&e), Stage::ResourceChosen, e.to_string(), None),
            }
        };
        self.step(
            Stage::ResourceChosen,
            json!({ "option": chosen, "default_option": default, "resources": resources, "warnings": warnings }),
        )?;
        let c = &mut self.stored.checkpoint;
        c.resources = resources;
        c.next = 0;
        c.phase = Phase::Wrap;
        Ok(Flow::Continue)
    }

    fn record_failure(&mut self, resource: &ResourceDescriptor, error_class: &str, error: &str) {
        self.stored.checkpoint.failed.push(json!({
            "source": resource.source_name,
            "url": resource.data_link,
            "error_class": error_class,
            "error": error,
        }));
    }

    fn accept(&mut self, extracted: Extracted) {
        let c = &mut self.stored.checkpoint;
        if self.engine.config.confirm_tables {
            c.unconfirmed = Some(extracted);
            c.phase = Phase::ConfirmTable;
        } else {
            c.extracted.push(extracted);
            c.phase = Phase::Wrap;
        }
    }

    fn wrap(&mut self) -> Result<Flow, EngineError> {
        let c = &self.stored.checkpoint;
        let Some(resource) = c.resources.get(c.next).cloned() else {
            self.stored.checkpoint.phase = Phase::Compile;
            return Ok(Flow::Continue);
        };
        self.stored.checkpoint.next += 1;
        let bundle = self.bundle();

        if let Some(pd) = self.engine.parts.kb.lookup(&resource.data_link) {
            let outcome = run_pd(&pd, &bundle.retrieval_query, &self.ctx(), &self.engine.parts.synonyms);
            let mut payload = json!({ "source": resource.source_name, "kb_hit": true, "process": pd.name, "url": pd.url });
            match outcome {
                Ok(table) => {
                    payload["table"] = table_summary(&table);
                    self.step(Stage::TableExtracted, payload)?;
                    self.accept(Extracted { resource, table });
                }
                Err(e) => {
                    payload["error_class"] = e.class().into();
                    payload["error"] = e.to_string().into();
                    self.step(Stage::TableExtracted, payload)?;
                    self.record_failure(&resource, e.class(), &e.to_string());
                }
            }
            return Ok(Flow::Continue);
        }

        match discover(&resource.data_link, &bundle, &self.ctx()) {
            Ok(d) => {
                let payload = json!({
                    "source": resource.source_name,
                    "url": resource.data_link,
                    "base_url": d.base_url,
                    "links": d.links.iter().map(|l| json!({
                        "url": l.url,
                        "anchor_text": l.anchor_text,
                        "relevance": l.relevance,
                        "kept": d.filtered.contains(&l.url),
                        "classification": l.classification,
                    })).collect::<Vec<_>>(),
                    "candidates": d.candidates.iter().map(|c| json!({
                        "url": c.url(), "label": c.label(), "class": c.class, "score": c.score,
                    })).collect::<Vec<_>>(),
                });
                self.step(Stage::LinksFiltered, payload)?;
                if d.candidates.is_empty() {
                    let payload = json!({
                        "source": resource.source_name, "kb_hit": false,
                        "error_class": "no_candidates", "error": "no access path found",
                    });
                    self.step(Stage::TableExtracted, payload)?;
                    self.record_failure(&resource, "no_candidates", "no access path found");
                } else {
                    self.stored.checkpoint.discovery = Some(d);
                    self.stored.checkpoint.phase = Phase::ChooseLink;
                }
            }
            Err(e) => {
                let payload = json!({
                    "source": resource.source_name, "kb_hit": false,
                    "error_class": e.class(), "error": e.to_string(),
                });
                self.step(Stage::TableExtracted, payload)?;
                self.record_failure(&resource, e.class(), &e.to_string());
            }
        }
        Ok(Flow::Continue)
    }

    fn choose_link(&mut self) -> Result<Flow, EngineError> {
        let c = &self.stored.checkpoint;
        let resource = c.resources[c.next - 1].clone();
        let Some(discovery) = c.discovery.clone() else {
            self.stored.checkpoint.phase = Phase::Wrap;
            return Ok(Flow::Continue);
        };
        let options = discovery
            .candidates
            .iter()
            .enumerate()
            .map(|(i, cand)| ChoiceOption {
                id: i + 1,
                label: cand.label(),
                summary: truncate(&cand.link.context_snippet, SUMMARY_CHARS),
                detail: json!({ "url": cand.url(), "class": cand.class, "score": cand.score }),
            })
            .collect();
        let chosen = match self.decide(ChoiceKind::Link, options, 1)? {
            Decision::Take(i) => i,
            Decision::Pause => return Ok(Flow::Stop),
        };
        let mut discovery = discovery;
        let first = discovery.candidates.remove(chosen - 1);
        self.step(
            Stage::LinkChosen,
            json!({ "source": resource.source_name, "option": chosen, "url": first.url(), "class": first.class }),
        )?;
        discovery.candidates.insert(0, first);
        self.stored.checkpoint.discovery = None;
        self.stored.checkpoint.phase = Phase::Wrap;

        let bundle = self.bundle();
        match try_candidates(discovery, &bundle, &self.ctx()) {
            WrapOutcome::Wrapped {
                table,
                candidate,
                attempts,
                ..
            } => {
                self.step(
                    Stage::TableExtracted,
                    json!({
                        "source": resource.source_name,
                        "kb_hit": false,
                        "url": candidate.url(),
                        "class": candidate.class,
                        "attempts": attempts,
                        "table": table_summary(&table),
                    }),
                )?;
                if self.engine.config.learn {
                    let pd = induce_pd(&resource.source_name, candidate.url(), None, &table);
                    match self.engine.parts.kb.insert(pd) {
                        Ok(()) => tracing::info!(source = %resource.source_name, "stored induced process description"),
                        Err(e) => tracing::warn!(source = %resource.source_name, error = %e, "induced description not stored"),
                    }
                }
                self.accept(Extracted { resource, table });
            }
            WrapOutcome::Unsuitable {
                reason,
                error_class,
                attempts,
                ..
            } => {
                self.step(
                    Stage::TableExtracted,
                    json!({
                        "source": resource.source_name,
                        "kb_hit": false,
                        "error_class": error_class,
                        "error": reason,
                        "attempts": attempts,
                    }),
                )?;
                self.record_failure(&resource, &error_class, &reason);
            }
        }
        Ok(Flow::Continue)
    }

    fn confirm_table(&mut self) -> Result<Flow, EngineError> {
        let Some(ex) = self.stored.checkpoint.unconfirmed.clone() else {
            self.stored.checkpoint.phase = Phase::Wrap;
            return Ok(Flow::Continue);
        };
        let options = vec![
            ChoiceOption {
                id: 1,
                label: "Use this table".into(),
                summary: format!("{} rows: {}", ex.table.rows.len(), ex.table.column_names().join(", ")),
                detail: table_summary(&ex.table),
            },
            ChoiceOption {
                id: 2,
                label: "Skip this source".into(),
                summary: ex.resource.source_name.clone(),
                detail: Value::Null,
            },
        ];
        let chosen = match self.decide(ChoiceKind::ConfirmTable, options, 1)? {
            Decision::Take(i) => i,
            Decision::Pause => return Ok(Flow::Stop),
        };
        self.stored.checkpoint.unconfirmed = None;
        if chosen == 1 {
            self.stored.checkpoint.extracted.push(ex);
        } else {
            self.record_failure(&ex.resource, "rejected", "table rejected by the user");
        }
        self.stored.checkpoint.phase = Phase::Wrap;
        Ok(Flow::Continue)
    }

    fn plan(&mut self) -> Result<Result<BioFlowQuery, (RunErrorKind, String, Option<Value>)>, EngineError> {
        let c = &self.stored.checkpoint;
        if let Some(text) = &c.plan_text {
            return Ok(parse_bioflow(text).map_err(|d| {
                (RunErrorKind::Compile, d.to_string(), serde_json::to_value(&d).ok())
            }));
        }
        if c.extracted.is_empty() {
            return Ok(Err((
                RunErrorKind::NoTables,
                "no source produced a table".into(),
                Some(json!({ "failures": c.failed })),
            )));
        }
        if let Some(base) = &c.base {
            return Ok(Ok(followup_plan(base, &c.extracted)));
        }
        let resources: Vec<ResourceDescriptor> = c.extracted.iter().map(|e| e.resource.clone()).collect();
        let columns = |r: &ResourceDescriptor| -> Result<Vec<String>, String> {
            c.extracted
                .iter()
                .find(|e| e.resource.data_link == r.data_link)
                .map(|e| e.table.column_names())
                .ok_or_else(|| "no table".to_string())
        };
        let term = c.bundle.as_ref().map_or(self.stored.run.query.as_str(), |b| b.retrieval_query.as_str());
        let kb = self.engine.parts.kb.read();
        Ok(compile_plan(term, &resources, &kb, &self.engine.parts.synonyms, &columns)
            .map_err(|e| (RunErrorKind::Compile, e.to_string(), serde_json::to_value(&e).ok())))
    }

    fn compile(&mut self) -> Result<Flow, EngineError> {
        let plan = match self.plan()? {
            Ok(p) => p,
            Err((kind, message, detail)) => return self.fail(kind, Stage::PlanCompiled, message, detail),
        };
        let text = render_bioflow(&plan);
        self.step(
            Stage::PlanCompiled,
            json!({
                "bioflow": text,
                "sources": plan.with_clauses.iter().map(|w| json!({
                    "alias": w.alias, "url": w.extract.source_url, "attributes": w.extract.attributes,
                })).collect::<Vec<_>>(),
            }),
        )?;
        self.stored.run.plan = Some(text);

        let c = &self.stored.checkpoint;
        let memory = c
            .extracted
            .iter()
            .fold(MemorySource::new().consuming(true), |m, e| m.with_link(&e.resource.data_link, e.table.clone()));
        let p = &self.engine.parts;
        let kb = p.kb.read();
        let source = EngineSource {
            engine: self.engine,
            base: c.base.as_ref(),
            memory,
            live: LiveSource {
                ctx: self.ctx(),
                kb: &kb,
                synonyms: &p.synonyms,
                default_term: c.bundle.as_ref().map_or(self.stored.run.query.clone(), |b| b.retrieval_query.clone()),
            },
        };
        let outcome = execute(&plan, &source, &self.engine.registry, &p.synonyms);
        drop(source);
        drop(kb);
        match outcome {
            Ok(ex) => {
                let mut failures: Vec<Value> = self.stored.checkpoint.failed.clone();
                failures.extend(ex.failures.iter().map(|f| serde_json::to_value(f).unwrap_or(Value::Null)));
                self.step(
                    Stage::PlanExecuted,
                    json!({
                        "rows": ex.table.rows.len(),
                        "columns": ex.table.column_names(),
                        "clause_rows": ex.clause_rows,
                        "pushed_down": ex.pushed_down,
                        "binding_consumed": ex.binding_consumed,
                        "failures": failures,
                    }),
                )?;
                self.stored.run.result = Some(ex.table);
                self.stored.run.state = RunState::Done;
                self.stored.checkpoint.phase = Phase::Finished;
                self.save()?;
                tracing::info!(run = %self.stored.run.id, "run done");
                Ok(Flow::Stop)
            }
            Err(e) => {
                let kind = match e {
                    ExecError::SourceFailed { .. } => RunErrorKind::SourceFailed,
                    _ => RunErrorKind::Compile,
                };
                let detail = serde_json::to_value(&e).ok();
                self.fail(kind, Stage::PlanExecuted, e.to_string(), detail)
            }
        }
    }
}

fn column_identifiers(table: &DataTable) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in table.column_names() {
        let id = identifier(&c);
        if !out.iter().any(|o| normalize_name(o) == normalize_name(&id)) {
            out.push(id);
        }
    }
    out
}

/// The base result joined with every newly extracted table, all columns
/// kept.
fn followup_plan(base: &BaseInput, extracted: &[Extracted]) -> BioFlowQuery {
    let mut clauses = vec![WithClause {
        alias: "base".into(),
        extract: ExtractClause {
            attributes: column_identifiers(&base.table),
            matcher: Some(DEFAULT_MATCHER.into()),
            filler: None,
            wrapper: None,
            source_url: run_url(&base.id),
            submit: "base".into(),
        },
    }];
    for e in extracted {
        let stem = source_alias(&e.resource.source_name);
        let mut alias = stem.clone();
        let mut n = 2;
        while clauses.iter().any(|w| w.alias.eq_ignore_ascii_case(&alias)) {
            alias = format!("{stem}{n}");
            n += 1;
        }
        clauses.push(WithClause {
            extract: ExtractClause {
                attributes: column_identifiers(&e.table),
                matcher: Some(DEFAULT_MATCHER.into()),
                filler: None,
                wrapper: Some(DEFAULT_WRAPPER.into()),
                source_url: e.resource.data_link.trim().to_string(),
                submit: alias.clone(),
            },
            alias,
        });
    }
    BioFlowQuery {
        select: Select::All,
        with_clauses: clauses,
        predicates: Vec::new(),
    }
}

/// Extracted tables by link, earlier run results under `run://<id>`, and
/// live access for anything else.
struct EngineSource<'a> {
    engine: &'a Engine,
    base: Option<&'a BaseInput>,
    memory: MemorySource,
    live: LiveSource<'a>,
}

impl TableSource for EngineSource<'_> {
    fn materialize(&self, clause: &WithClause, binding: Option<&str>) -> Result<Materialized, SourceError> {
        if let Some(id) = clause.extract.source_url.strip_prefix("run://") {
            let id = id.trim_end_matches('/');
            let table = match self.base.filter(|b| b.id == id) {
                Some(b) => Some(b.table.clone()),
                None => self.engine.result_of(id),
            };
            return table
                .map(|table| Materialized {
                    table,
                    consumed_binding: false,
                })
                .ok_or_else(|| SourceError {
                    class: "unknown_run".into(),
                    message: format!("no finished run `{id}`"),
                });
        }
        self.memory
            .materialize(clause, binding)
            .or_else(|_| self.live.materialize(clause, binding))
    }
}
