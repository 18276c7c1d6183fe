use std::path::PathBuf;

use kql::engine::{execute, load_database_dir};
use nl2kql::catalog::DataCatalog;
use nl2kql::embed::DeterministicEmbedder;
use nl2kql::eval::parse_benchmark;
use nl2kql::fewshot::load_fsdb_path;
use sha2::{Digest, Sha256};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn catalog(name: &str) -> DataCatalog {
    DataCatalog::from_path(&fixture(&format!("catalogs/{name}.json"))).unwrap()
}

/// sha256 over `Table:col1,col2,...\n` lines in catalog order.
fn column_checksum(c: &DataCatalog) -> String {
    let mut h = Sha256::new();
    for t in &c.tables {
        let cols: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
        h.update(format!("{}:{}\n", t.name, cols.join(",")).as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn catalogs_have_the_published_table_counts() {
    assert_eq!(catalog("defender").tables.len(), 29);
    assert_eq!(catalog("sentinel").tables.len(), 23);
}

#[test]
fn catalog_columns_match_the_frozen_listing() {
    assert_eq!(
        column_checksum(&catalog("defender")),
        "4725e179344d109fc49d9757a896270169cf17c45c804204f4e8fd241d3a57f4"
    );
    assert_eq!(
        column_checksum(&catalog("sentinel")),
        "7eb2ee956c28182b84265bac595d28bf08a170b3efe3f51a370f9c09f2b20f29"
    );
}

#[test]
fn shipped_fewshot_databases_validate() {
    for (name, n) in [("defender", 16), ("sentinel", 19)] {
        let db = load_fsdb_path(&fixture(&format!("fsdb/{name}.jsonl")), &catalog(name), &DeterministicEmbedder, None)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(db.len(), n);
    }
}

#[test]
fn toy_data_matches_the_catalog() {
    let c = catalog("defender");
    let db = load_database_dir(&fixture("data/defender")).unwrap();
    let mut n = 0;
    for t in db.tables() {
        let ct = c.table(&t.name).unwrap_or_else(|| panic!("{} not in catalog", t.name));
        assert_eq!(t.schema(), ct.schema(), "{}", t.name);
        n += 1;
    }
    assert_eq!(n, 5);
}

#[test]
fn benchmark_ground_truths_validate_and_run() {
    let c = catalog("defender");
    let schema = c.schema();
    let db = load_database_dir(&fixture("data/defender")).unwrap();
    let text = std::fs::read_to_string(fixture("benchmark/defender_toy.jsonl")).unwrap();
    let samples = parse_benchmark(&text).unwrap();
    assert_eq!(samples.len(), 20);
    for s in &samples {
        let a = kql::analyze(&s.kql, &schema);
        assert!(a.diagnostics.is_empty(), "{}: {:?}", s.nlq, a.diagnostics);
        let r = execute(&a.query.unwrap(), &db).unwrap_or_else(|e| panic!("{}: {e}", s.nlq));
        assert!(!r.rows.is_empty(), "{} returns no rows", s.nlq);
    }
}
