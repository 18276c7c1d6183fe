use std::collections::BTreeSet;
use std::path::PathBuf;

use nl2kql::catalog::DataCatalog;
use nl2kql::config::RunConfig;
use nl2kql::embed::{DeterministicEmbedder, VectorStore};
use nl2kql::fewshot::{load_fsdb, parse_records, FewShotDb};
use nl2kql::llm::{FnClient, LlmRequest, LlmResponse, ScriptedClient};
use nl2kql::pipeline::{Stage, StageStatus, Translator};
use nl2kql::stores::build_store;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

struct Env {
    catalog: DataCatalog,
    store: VectorStore,
    fsdb: FewShotDb,
}

fn env() -> Env {
    let catalog = DataCatalog::from_path(&fixture("catalogs/defender.json")).unwrap();
    let text = std::fs::read_to_string(fixture("fsdb/defender.jsonl")).unwrap();
    let nlqs: Vec<String> = parse_records(&text).unwrap().into_iter().map(|r| r.nlq).collect();
    let store = build_store(&catalog, &nlqs, &DeterministicEmbedder).unwrap();
    let fsdb = load_fsdb(&text, &catalog, &DeterministicEmbedder, Some(&store)).unwrap();
    Env { catalog, store, fsdb }
}

#[test]
fn translation_is_deterministic_apart_from_timings() {
    let e = env();
    let llm = ScriptedClient::from_path(&fixture("transcripts/defender_toy.jsonl")).unwrap();
    let config = RunConfig::default();
    let t = Translator {
        catalog: &e.catalog,
        store: &e.store,
        fsdb: &e.fsdb,
        embedder: &DeterministicEmbedder,
        llm: &llm,
        config: &config,
    };
    let all = e.catalog.table_names();
    for nlq in ["List all devices", "Show devices with inactive sensors", "Count alerts per category"] {
        let a = t.translate(nlq, &all);
        let b = t.translate(nlq, &all);
        assert_eq!(a.without_timings(), b.without_timings(), "{nlq}");
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.trace.iter().map(|s| s.stage).collect::<Vec<_>>(), Stage::ALL.to_vec());
    }
}

#[test]
fn identifier_typo_is_substituted() {
    let e = env();
    let llm = ScriptedClient::from_path(&fixture("transcripts/defender_toy.jsonl")).unwrap();
    let config = RunConfig::default();
    let t = Translator {
        catalog: &e.catalog,
        store: &e.store,
        fsdb: &e.fsdb,
        embedder: &DeterministicEmbedder,
        llm: &llm,
        config: &config,
    };
    let r = t.translate("Show devices with inactive sensors", &e.catalog.table_names());
    let rep = r.repair.as_ref().unwrap();
    assert!(rep.fixed, "{:?}", rep.remaining);
    assert!(r.final_kql.unwrap().contains("SensorHealthState"));
}

#[test]
fn inaccessible_table_is_not_laundered() {
    let e = env();
    let llm = FnClient(|_: &LlmRequest| Ok(LlmResponse::text("~~~kusto\nAlertInfo\n| take 5\n~~~")));
    let config = RunConfig::default();
    let t = Translator {
        catalog: &e.catalog,
        store: &e.store,
        fsdb: &e.fsdb,
        embedder: &DeterministicEmbedder,
        llm: &llm,
        config: &config,
    };
    let scope: BTreeSet<String> = ["DeviceInfo".to_string(), "DeviceLogonEvents".to_string()].into();
    let r = t.translate("Show recent alerts", &scope);
    assert!(r.tables.iter().all(|t| scope.contains(t)), "{:?}", r.tables);
    let rep = r.repair.as_ref().unwrap();
    assert!(!rep.fixed);
    assert_eq!(rep.final_kql, "AlertInfo\n| take 5");
    assert!(rep.remaining.iter().any(|d| d.code == kql::codes::TABLE_NOT_ACCESSIBLE), "{:?}", rep.remaining);
}

#[test]
fn provider_failure_is_reported_at_its_stage() {
    let e = env();
    let llm = FnClient(|_: &LlmRequest| Err(nl2kql::llm::LlmError::Transport("connection refused".into())));
    let config = RunConfig::default();
    let t = Translator {
        catalog: &e.catalog,
        store: &e.store,
        fsdb: &e.fsdb,
        embedder: &DeterministicEmbedder,
        llm: &llm,
        config: &config,
    };
    let r = t.translate("List all devices", &e.catalog.table_names());
    assert!(!r.succeeded());
    assert_eq!(r.error.as_ref().unwrap().stage, Stage::Complete);
    let status = |s: Stage| r.trace.iter().find(|t| t.stage == s).unwrap().status;
    assert_eq!(status(Stage::Complete), StageStatus::Failed);
    assert_eq!(status(Stage::Repair), StageStatus::Skipped);
}
