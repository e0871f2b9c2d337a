use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::corpus::HashEmbedder;
use crate::process::parse_pd;
use crate::table::Cell;

const Q: &str = "Retrieve gene and protein information for all \"H2A histone\" genes from UniProt and associated infertility data from the Male Infertility Knowledgebase (MiKDB).";

fn fixtures() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))
}

fn kb_with_descriptions() -> ProcessKB {
    let mut kb = ProcessKB::new();
    for f in ["MiKDB.pd", "UniProtAccess.pd"] {
        let text = std::fs::read_to_string(fixtures().join("kb").join(f)).unwrap();
        kb.insert(parse_pd(&text).unwrap()).unwrap();
    }
    kb
}

fn engine_with(kb: ProcessKB, config: EngineConfig) -> Engine {
    let parts = EngineParts::from_fixture_dir(&fixtures(), kb).unwrap();
    Engine::new(parts, config, Arc::new(MemoryStore::new()))
}

fn engine() -> Engine {
    engine_with(ProcessKB::new(), EngineConfig::default())
}

fn rows(t: &DataTable) -> Vec<Vec<String>> {
    t.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect()
}

fn stages(run: &Run) -> Vec<Stage> {
    run.steps.iter().map(|s| s.stage).collect()
}

/// Query, ranking and source choice once; per-source blocks of optional
/// link stages then an extraction; compile and execute once.
fn assert_lifecycle(run: &Run) {
    let s: Vec<Stage> = stages(run).into_iter().filter(|s| *s != Stage::AwaitingChoice).collect();
    assert_eq!(&s[..3], &[Stage::QueryProcessed, Stage::SourcesRanked, Stage::ResourceChosen]);
    assert_eq!(&s[s.len() - 2..], &[Stage::PlanCompiled, Stage::PlanExecuted]);
    let mut i = 3;
    while i < s.len() - 2 {
        if s[i] == Stage::LinksFiltered {
            assert_eq!(s[i + 1], Stage::LinkChosen, "{s:?}");
            i += 2;
        }
        assert_eq!(s[i], Stage::TableExtracted, "{s:?}");
        i += 1;
    }
    for (n, step) in run.steps.iter().enumerate() {
        assert_eq!(step.seq, n);
    }
}

/// The two fixture tables joined by hand on gene symbol.
fn joined() -> Vec<Vec<String>> {
    vec![
        vec!["H2AX".into(), "P16104".into(), "Azoospermia".into()],
        vec!["H2AZ1".into(), "P0C0S5".into(), "Oligozoospermia".into()],
    ]
}

fn finish_guided(e: &Engine, mut run: Run, picks: &mut dyn FnMut(&ChoiceRequest) -> usize) -> Run {
    while run.state == RunState::AwaitingChoice {
        let choice = run.choice.clone().unwrap();
        run = e.choose(&run.id, picks(&choice)).unwrap();
    }
    run
}

#[test]
fn auto_run_joins_the_fixture_sources() {
    let e = engine();
    let run = e.run_auto(Q, None).unwrap();
    assert_eq!(run.state, RunState::Done, "{:?}", run.error);
    let t = run.result.as_ref().unwrap();
    assert_eq!(t.column_names(), ["GeneSymbol", "ProteinID", "InfertilityData"]);
    assert_eq!(rows(t), joined());
    for stage in Stage::LIFECYCLE {
        assert!(stages(&run).contains(&stage), "missing {stage:?}");
    }
    assert!(!stages(&run).contains(&Stage::AwaitingChoice));
    assert_lifecycle(&run);
    let plan = crate::bioflow::parse_bioflow(run.plan.as_ref().unwrap()).unwrap();
    let worked = crate::bioflow::parse_bioflow(crate::bioflow::tests::WORKED).unwrap();
    assert_eq!(plan.select, worked.select);
    assert_eq!(plan.predicates, worked.predicates);
    assert_eq!(run.choices.len(), 3);
    assert!(run.choices.iter().all(|c| c.selected == Some(c.request.default_option)));
    assert_eq!(e.get(&run.id).unwrap(), run);
}

#[test]
fn knowledge_is_recorded_in_the_bundle() {
    let e = engine();
    let run = e.run_auto(Q, Some("focus on human proteins")).unwrap();
    assert_eq!(run.state, RunState::Done);
    let bundle = &run.steps[0].payload["bundle"];
    assert_eq!(bundle["metadata"]["knowledge"], "focus on human proteins");
}

#[test]
fn empty_corpus_and_null_keyword_search_fail_without_candidates() {
    let embedder = HashEmbedder::default();
    let index = Arc::new(CorpusIndex::build(Vec::new(), &embedder, 1).unwrap());
    let mut parts = EngineParts::from_fixture_dir(&fixtures(), ProcessKB::new()).unwrap();
    parts.keywords = Arc::new(LocalBooleanBackend::new(&index));
    parts.index = index;
    let e = Engine::new(parts, EngineConfig::default(), Arc::new(MemoryStore::new()));
    let run = e.run_auto(Q, None).unwrap();
    assert_eq!(run.state, RunState::Failed);
    let err = run.error.unwrap();
    assert_eq!(err.kind, RunErrorKind::NoCandidates);
    assert_eq!(err.stage, Some(Stage::SourcesRanked));
    assert!(run.result.is_none());
}

#[test]
fn stored_descriptions_skip_discovery() {
    let e = engine_with(kb_with_descriptions(), EngineConfig::default());
    let run = e.run_auto(Q, None).unwrap();
    assert_eq!(run.state, RunState::Done, "{:?}", run.error);
    assert_eq!(rows(run.result.as_ref().unwrap()), joined());
    let s = stages(&run);
    assert!(!s.contains(&Stage::LinksFiltered));
    assert!(!s.contains(&Stage::LinkChosen));
    let hits: Vec<_> = run.steps.iter().filter(|s| s.stage == Stage::TableExtracted).collect();
    assert_eq!(hits.len(), 2);
    assert!(hits.iter().all(|s| s.payload["kb_hit"] == true));
    assert_lifecycle(&run);
}

#[test]
fn guided_run_with_default_choices_matches_auto() {
    let e = engine();
    let auto = e.run_auto(Q, None).unwrap();
    let guided = e.run_guided(Q, None).unwrap();
    assert_eq!(guided.state, RunState::AwaitingChoice);
    let first = guided.choice.as_ref().unwrap();
    assert_eq!(first.kind, ChoiceKind::Source);
    assert_eq!(first.options.len(), 4);
    let mut kinds = Vec::new();
    let done = finish_guided(&e, guided, &mut |c| {
        kinds.push(c.kind);
        c.default_option
    });
    assert_eq!(done.state, RunState::Done);
    assert_eq!(kinds, [ChoiceKind::Source, ChoiceKind::Link, ChoiceKind::Link]);
    let a = serde_json::to_vec(auto.result.as_ref().unwrap()).unwrap();
    let g = serde_json::to_vec(done.result.as_ref().unwrap()).unwrap();
    assert_eq!(a, g);
    assert_eq!(done.plan, auto.plan);
    assert_lifecycle(&done);
    // each pause is logged right before the stage it decides
    let s = stages(&done);
    for (i, st) in s.iter().enumerate().filter(|(_, st)| **st == Stage::AwaitingChoice) {
        assert!(matches!(s[i + 1], Stage::ResourceChosen | Stage::LinkChosen), "{s:?}");
        let _ = st;
    }
}

#[test]
fn guided_choice_of_the_second_source() {
    let e = engine();
    let guided = e.run_guided(Q, None).unwrap();
    let choice = guided.choice.clone().unwrap();
    let second = &choice.options[1];
    let mut seen = Vec::new();
    let done = finish_guided(&e, guided, &mut |c| {
        seen.push(c.kind);
        if c.kind == ChoiceKind::Source {
            2
        } else {
            1
        }
    });
    assert_eq!(done.state, RunState::Done, "{:?}", done.error);
    assert_eq!(seen, [ChoiceKind::Source, ChoiceKind::Link]);
    let chosen = &done.steps.iter().find(|s| s.stage == Stage::ResourceChosen).unwrap().payload;
    assert_eq!(chosen["option"], 2);
    assert_eq!(chosen["resources"][0]["origin_doc"], second.detail["doc_id"]);
    assert_eq!(chosen["resources"].as_array().unwrap().len(), 1);
    let t = done.result.unwrap();
    // the second-ranked paper is the MiKDB one; its form path yields the
    // whole response table, projected to the concepts it covers
    assert_eq!(chosen["resources"][0]["source_name"], "Male Infertility Knowledgebase (MiKDB)");
    assert_eq!(t.column_names(), ["GeneSymbol", "InfertilityData"]);
    assert_eq!(
        rows(&t),
        [["H2AX", "Azoospermia"], ["H2AZ1", "Oligozoospermia"], ["PRM1", "Teratozoospermia"]]
    );
}

#[test]
fn choices_are_validated() {
    let e = engine();
    let guided = e.run_guided(Q, None).unwrap();
    let err = e.submit_choice(&guided.id, 9).unwrap_err();
    assert!(matches!(err, EngineError::UnknownOption { option: 9, available: 4 }));
    let err = e.submit_choice(&guided.id, 0).unwrap_err();
    assert_eq!(err.kind(), "unknown_option");
    assert_eq!(e.get(&guided.id).unwrap().state, RunState::AwaitingChoice);

    let submitted = e.submit_choice(&guided.id, 1).unwrap();
    assert_eq!(submitted.state, RunState::Executing);
    let err = e.submit_choice(&guided.id, 1).unwrap_err();
    assert!(matches!(err, EngineError::NotAwaitingChoice { state: RunState::Executing, .. }));
    let resumed = e.advance(&guided.id).unwrap();
    assert_eq!(resumed.state, RunState::AwaitingChoice);
    assert_eq!(resumed.choice.as_ref().unwrap().kind, ChoiceKind::Link);
    assert!(matches!(e.submit_choice("nope", 1), Err(EngineError::NotFound(_))));
}

#[test]
fn abandoned_guided_session_expires() {
    let config = EngineConfig {
        guided_timeout: Duration::from_millis(1),
        ..EngineConfig::default()
    };
    let e = engine_with(ProcessKB::new(), config);
    let guided = e.run_guided(Q, None).unwrap();
    std::thread::sleep(Duration::from_millis(20));
    let run = e.get(&guided.id).unwrap();
    assert_eq!(run.state, RunState::Failed);
    assert_eq!(run.error.unwrap().kind, RunErrorKind::SessionExpired);
    assert!(run.choice.is_none());
    assert!(matches!(e.submit_choice(&guided.id, 1), Err(EngineError::NotAwaitingChoice { .. })));
}

#[test]
fn expire_stale_sweeps_waiting_runs() {
    let config = EngineConfig {
        guided_timeout: Duration::from_millis(1),
        ..EngineConfig::default()
    };
    let e = engine_with(ProcessKB::new(), config);
    e.run_guided(Q, None).unwrap();
    e.run_auto(Q, None).unwrap();
    std::thread::sleep(Duration::from_millis(20));
    assert_eq!(e.expire_stale().unwrap(), 1);
    assert_eq!(e.expire_stale().unwrap(), 0);
}

#[test]
fn rechoice_on_a_done_run_forks() {
    let e = engine();
    let base = e.run_auto(Q, None).unwrap();
    let fork = e.rechoose(&base.id, 0, 2).unwrap();
    assert_ne!(fork.id, base.id);
    assert_eq!(fork.parent.as_deref(), Some(base.id.as_str()));
    let prefix = base.choices[0].steps_before;
    assert_eq!(fork.steps[..prefix], base.steps[..prefix]);
    assert_eq!(fork.steps[prefix].stage, Stage::ResourceChosen);
    assert_eq!(fork.steps[prefix].payload["option"], 2);
    assert_eq!(fork.state, RunState::Done);
    assert_eq!(fork.result.as_ref().unwrap().rows.len(), 3);
    // the original is untouched
    assert_eq!(e.get(&base.id).unwrap(), base);

    // forking with the same choices reproduces the result
    let same = e.rechoose(&base.id, 1, 1).unwrap();
    assert_eq!(same.result, base.result);

    assert!(matches!(e.fork(&base.id, 7, 1), Err(EngineError::UnknownChoicePoint { .. })));
    assert!(matches!(e.fork(&base.id, 0, 9), Err(EngineError::UnknownOption { .. })));
    let waiting = e.run_guided(Q, None).unwrap();
    assert!(matches!(e.fork(&waiting.id, 0, 1), Err(EngineError::NotFinished { .. })));
}

#[test]
fn replay_reproduces_the_result() {
    let e = engine();
    let auto = e.run_auto(Q, None).unwrap();
    let again = e.replay(&auto.id).unwrap();
    assert_eq!(again.result, auto.result);
    assert_eq!(stages(&again), stages(&auto));

    let guided = e.run_guided(Q, None).unwrap();
    let done = finish_guided(&e, guided, &mut |c| if c.kind == ChoiceKind::Source { 2 } else { 1 });
    let replayed = e.replay(&done.id).unwrap();
    assert_eq!(replayed.state, RunState::Done);
    assert_eq!(replayed.result, done.result);
}

#[test]
fn followup_joins_a_new_source() {
    let e = engine();
    let base = e.run_auto(Q, None).unwrap();
    let run = e
        .run_followup(&base.id, "Add tissue expression levels from the Human Protein Atlas")
        .unwrap();
    assert_eq!(run.state, RunState::Done, "{:?}", run.error);
    assert_eq!(run.base.as_deref(), Some(base.id.as_str()));
    let t = run.result.unwrap();
    assert_eq!(
        t.column_names(),
        ["GeneSymbol", "ProteinID", "InfertilityData", "Tissue", "Expression"]
    );
    assert_eq!(
        rows(&t),
        [
            ["H2AX", "P16104", "Azoospermia", "testis", "45.2"],
            ["H2AZ1", "P0C0S5", "Oligozoospermia", "testis", "120.5"],
        ]
    );
}

#[test]
fn filter_followup_is_a_row_subset() {
    let e = engine();
    let base = e.run_auto(Q, None).unwrap();
    let run = e.run_followup(&base.id, "where InfertilityData = 'Azoospermia'").unwrap();
    assert_eq!(run.state, RunState::Done, "{:?}", run.error);
    let t = run.result.clone().unwrap();
    let b = base.result.unwrap();
    assert_eq!(t.column_names(), b.column_names());
    assert_eq!(rows(&t), [joined()[0].clone()]);
    assert_eq!(stages(&run), [Stage::PlanCompiled, Stage::PlanExecuted]);

    let like = e.run_followup(&base.id, "where ProteinID like 'p0'").unwrap();
    assert_eq!(rows(like.result.as_ref().unwrap()), [joined()[1].clone()]);
}

#[test]
fn followup_naming_a_missing_column_fails_to_compile() {
    let e = engine();
    let base = e.run_auto(Q, None).unwrap();
    let run = e.run_followup(&base.id, "where Tissue = 'testis'").unwrap();
    assert_eq!(run.state, RunState::Failed);
    let err = run.error.unwrap();
    assert_eq!(err.kind, RunErrorKind::Compile);
    assert_eq!(err.detail.unwrap()["kind"], "unknown_column");

    let bad = e.run_followup(&base.id, "select * from (").unwrap();
    assert_eq!(bad.error.unwrap().kind, RunErrorKind::Compile);
}

#[test]
fn bioflow_followup_over_run_results() {
    let e = engine();
    let base = e.run_auto(Q, None).unwrap();
    let text = format!(
        "select GeneSymbol, Tissue from (with b as (extract GeneSymbol from run://{} submit b), \
         hpa as (extract Gene, Tissue from https://www.proteinatlas.org/ submit hpa))",
        base.id
    );
    let run = e.run_followup(&base.id, &text).unwrap();
    assert_eq!(run.state, RunState::Done, "{:?}", run.error);
    assert_eq!(rows(run.result.as_ref().unwrap()), [["H2AX", "testis"], ["H2AZ1", "testis"]]);
}

#[test]
fn followups_need_a_done_base() {
    let e = engine();
    let waiting = e.run_guided(Q, None).unwrap();
    assert!(matches!(e.followup(&waiting.id, "where A = 1"), Err(EngineError::BaseNotDone { .. })));
}

#[test]
fn confirm_tables_adds_a_choice_per_table() {
    let config = EngineConfig {
        confirm_tables: true,
        ..EngineConfig::default()
    };
    let e = engine_with(ProcessKB::new(), config);
    let guided = e.run_guided(Q, None).unwrap();
    let mut kinds = Vec::new();
    let done = finish_guided(&e, guided, &mut |c| {
        kinds.push(c.kind);
        if c.kind == ChoiceKind::ConfirmTable && kinds.len() == 5 {
            2
        } else {
            c.default_option
        }
    });
    assert_eq!(
        kinds,
        [
            ChoiceKind::Source,
            ChoiceKind::Link,
            ChoiceKind::ConfirmTable,
            ChoiceKind::Link,
            ChoiceKind::ConfirmTable
        ]
    );
    // the second table was rejected, so only the first source remains
    assert_eq!(done.state, RunState::Done, "{:?}", done.error);
    assert_eq!(done.result.unwrap().rows.len(), 3);
}

#[test]
fn learned_descriptions_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let kb = ProcessKB::open(dir.path(), &SynonymTable::builtin()).unwrap();
    let config = EngineConfig {
        learn: true,
        ..EngineConfig::default()
    };
    let e = engine_with(kb, config);
    let first = e.run_auto(Q, None).unwrap();
    assert_eq!(first.state, RunState::Done);
    assert_eq!(e.parts().kb.read().len(), 2);
    let second = e.run_auto(Q, None).unwrap();
    assert_eq!(second.state, RunState::Done, "{:?}", second.error);
    assert!(!stages(&second).contains(&Stage::LinksFiltered));
    assert_eq!(rows(second.result.as_ref().unwrap()), joined());
    let reopened = ProcessKB::open(dir.path(), &SynonymTable::builtin()).unwrap();
    assert_eq!(reopened.len(), 2);
}

#[test]
fn file_store_resumes_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let parts = EngineParts::from_fixture_dir(&fixtures(), ProcessKB::new()).unwrap();
    let first = Engine::new(parts.clone(), EngineConfig::default(), Arc::new(FileStore::open(dir.path()).unwrap()));
    let guided = first.run_guided(Q, None).unwrap();
    drop(first);
    let second = Engine::new(parts, EngineConfig::default(), Arc::new(FileStore::open(dir.path()).unwrap()));
    let waiting = second.get(&guided.id).unwrap();
    assert_eq!(waiting.state, RunState::AwaitingChoice);
    let done = finish_guided(&second, waiting, &mut |c| c.default_option);
    assert_eq!(done.state, RunState::Done);
    assert_eq!(rows(done.result.as_ref().unwrap()), joined());
    assert_eq!(second.list().unwrap().len(), 1);
}

#[test]
fn concurrent_readers_see_log_prefixes() {
    let e = Arc::new(engine());
    let run = e.start(Mode::Auto, Q, None).unwrap();
    let id = run.id.clone();
    let reader = {
        let e = e.clone();
        let id = id.clone();
        std::thread::spawn(move || {
            let mut last = 0;
            loop {
                let r = e.get(&id).unwrap();
                assert!(r.steps.len() >= last);
                for (n, s) in r.steps.iter().enumerate() {
                    assert_eq!(s.seq, n);
                }
                last = r.steps.len();
                if r.state.is_terminal() {
                    return last;
                }
                std::thread::yield_now();
            }
        })
    };
    let done = e.advance(&id).unwrap();
    assert_eq!(reader.join().unwrap(), done.steps.len());
}

#[test]
fn failed_sources_are_reported() {
    let e = engine();
    // the assistant fixture maps this paper to an unserved host
    let guided = e.run_guided(Q, None).unwrap();
    let choice = guided.choice.clone().unwrap();
    let unserved = choice
        .options
        .iter()
        .find(|o| o.detail["sources"].as_array().is_some_and(|s| s.is_empty()))
        .map(|o| o.id)
        .unwrap();
    let done = finish_guided(&e, guided, &mut |c| if c.kind == ChoiceKind::Source { unserved } else { 1 });
    assert_eq!(done.state, RunState::Failed);
    let err = done.error.unwrap();
    assert_eq!(err.kind, RunErrorKind::NoTables);
    let extracted = done.steps.iter().find(|s| s.stage == Stage::TableExtracted).unwrap();
    assert!(extracted.payload["error_class"].is_string());
}

