//! Acceptance checks, one test per criterion. Each prints a PASS/FAIL line
//! (visible with `--nocapture`) and fails the test on FAIL.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use kql::engine::{execute, row_signatures, DataTable, Database, Value};
use kql::{parse, render, tokenize, ColumnType, Schema, TableSchema};
use nl2kql::catalog::DataCatalog;
use nl2kql::config::{Limit, RunConfig};
use nl2kql::embed::DeterministicEmbedder;
use nl2kql::eval::{offline_scores, online_scores};
use nl2kql::fewshot::{load_fsdb, parse_records, write_records};
use nl2kql::llm::{FnClient, LlmResponse, ScriptedClient};
use nl2kql::pipeline::{Stage, StageStatus, Translator};
use nl2kql::prompt::NO_EXAMPLES;
use nl2kql::refine::refine_schema;
use nl2kql::repair::{repair, RepairOptions, Substitution};
use nl2kql::stores::build_store;
use nl2kql::synthgen::{judge, sample_tables, synthesize, token_jaccard, SynthOptions, Verdict};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn report(n: usize, title: &str, check: impl FnOnce() -> Check) {
    let start = Instant::now();
    let outcome = check();
    let took = start.elapsed();
    match &outcome {
        Ok(()) => println!("criterion {n}: PASS {title} ({took:.2?})"),
        Err(e) => println!("criterion {n}: FAIL {title}: {e}"),
    }
    if let Err(e) = outcome {
        panic!("criterion {n} failed: {e}");
    }
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> PathBuf {
    workspace().join("fixtures").join(rel)
}

fn defender() -> DataCatalog {
    DataCatalog::from_path(&fixture("catalogs/defender.json")).unwrap()
}

fn jaccard_oracle(a: &[String], b: &[String]) -> f64 {
    let a: Vec<&String> = dedup(a);
    let b: Vec<&String> = dedup(b);
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn dedup(v: &[String]) -> Vec<&String> {
    let mut out: Vec<&String> = Vec::new();
    for x in v {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn database(tables: Vec<DataTable>) -> Database {
    let mut db = Database::new();
    for t in tables {
        let name = t.name.clone();
        db.insert(t, &name).unwrap();
    }
    db
}

// ---- 1 ----

fn blocks(file: &str) -> Vec<String> {
    let text = std::fs::read_to_string(fixture("kql").join(file)).unwrap();
    text.split("\n====\n").map(|b| b.trim_end_matches('\n').to_string()).collect()
}

fn template_snippets() -> Vec<String> {
    let text = std::fs::read_to_string(workspace().join("crates/core/assets/prompt_template.md")).unwrap();
    let mut out = Vec::new();
    let mut body: Option<Vec<&str>> = None;
    for line in text.lines() {
        match (&mut body, line.trim_end()) {
            (None, "~~~kusto") => body = Some(Vec::new()),
            (Some(b), "~~~") => {
                out.push(b.join("\n"));
                body = None;
            }
            (Some(b), _) => b.push(line),
            (None, _) => {}
        }
    }
    out.retain(|s| s.trim() != "KQL QUERY GOES HERE");
    out
}

#[test]
fn criterion_1_parser_corpus() {
    report(1, "parser corpus", || {
        let mut corpus = blocks("forms.kql");
        corpus.extend(blocks("syntax_table.kql"));
        corpus.extend(template_snippets());
        corpus.retain(|q| !q.trim_start().starts_with(".create"));
        ensure!(corpus.len() >= 30, "corpus too small: {}", corpus.len());
        let start = Instant::now();
        for q in &corpus {
            let parsed = parse(q);
            let syntax: Vec<_> = parsed.diagnostics.iter().filter(|d| d.is_syntax()).collect();
            ensure!(syntax.is_empty() && parsed.query.is_some(), "{q}: {syntax:?}");
            let (tokens, _) = tokenize(q);
            let joined: String = tokens.iter().map(|t| t.text).collect();
            ensure!(&joined == q, "lexing lost text in {q}");
            let first = parsed.query.unwrap();
            let printed = render(&first);
            ensure!(parse(&printed).query.as_ref() == Some(&first), "round trip changed {q}");
        }
        let took = start.elapsed();
        ensure!(took.as_secs_f64() < 1.0, "corpus took {took:?}");
        Ok(())
    });
}

// ---- 2 ----

#[test]
fn criterion_2_catalog_fidelity() {
    report(2, "catalog fidelity", || {
        let checksum = |c: &DataCatalog| -> String {
            let mut h = Sha256::new();
            for t in &c.tables {
                let cols: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
                h.update(format!("{}:{}\n", t.name, cols.join(",")).as_bytes());
            }
            h.finalize().iter().map(|b| format!("{b:02x}")).collect()
        };
        let d = defender();
        let s = DataCatalog::from_path(&fixture("catalogs/sentinel.json")).unwrap();
        ensure!(d.tables.len() == 29, "defender has {} tables", d.tables.len());
        ensure!(s.tables.len() == 23, "sentinel has {} tables", s.tables.len());
        ensure!(
            checksum(&d) == "4725e179344d109fc49d9757a896270169cf17c45c804204f4e8fd241d3a57f4",
            "defender column listing changed"
        );
        ensure!(
            checksum(&s) == "7eb2ee956c28182b84265bac595d28bf08a170b3efe3f51a370f9c09f2b20f29",
            "sentinel column listing changed"
        );
        Ok(())
    });
}

// ---- 3 ----

const TOY_TABLES: [&str; 4] = ["A", "B", "C", "D"];
const STRING_COLS: [&str; 3] = ["s0", "s1", "s2"];
const LONG_COLS: [&str; 2] = ["n0", "n1"];

fn toy_columns() -> Vec<(String, ColumnType)> {
    STRING_COLS
        .iter()
        .map(|c| (c.to_string(), ColumnType::String))
        .chain(LONG_COLS.iter().map(|c| (c.to_string(), ColumnType::Long)))
        .collect()
}

fn toy_schema() -> Schema {
    let mut s = Schema::new();
    for t in TOY_TABLES {
        s.add_table(TableSchema::new(t, toy_columns()));
    }
    s
}

/// A random query together with the table, filter-column and
/// filter-literal sets it was built from.
struct ToyQuery {
    text: String,
    tables: Vec<String>,
    columns: Vec<String>,
    literals: Vec<String>,
}

fn toy_query(rng: &mut ChaCha8Rng) -> ToyQuery {
    let k = rng.gen_range(1..=3);
    let tables: Vec<String> = TOY_TABLES.choose_multiple(rng, k).map(|t| t.to_string()).collect();
    let mut text = if k == 1 {
        tables[0].clone()
    } else {
        format!("union {}", tables.join(", "))
    };
    let mut columns = Vec::new();
    let mut literals = Vec::new();
    let mut preds = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        if rng.gen_bool(0.6) {
            let c = STRING_COLS[rng.gen_range(0..3)];
            let v = ["a", "b", "c"][rng.gen_range(0..3)];
            preds.push(format!("{c} == \"{v}\""));
            columns.push(c.to_string());
            literals.push(v.to_string());
        } else {
            let c = LONG_COLS[rng.gen_range(0..2)];
            let v = rng.gen_range(0..4);
            preds.push(format!("{c} > {v}"));
            columns.push(c.to_string());
            literals.push(v.to_string());
        }
    }
    if !preds.is_empty() {
        let joiner = if rng.gen_bool(0.5) { " and " } else { " or " };
        text.push_str(&format!(" | where {}", preds.join(joiner)));
    }
    if rng.gen_bool(0.3) {
        text.push_str(" | project s0, n0");
    }
    ToyQuery {
        text,
        tables,
        columns,
        literals,
    }
}

fn toy_database(rng: &mut ChaCha8Rng) -> Database {
    let tables = TOY_TABLES
        .iter()
        .map(|name| DataTable {
            name: name.to_string(),
            columns: toy_columns(),
            rows: (0..rng.gen_range(0..12))
                .map(|_| {
                    let mut row: Vec<Value> = (0..3)
                        .map(|_| Value::String(["a", "b", "c"][rng.gen_range(0..3)].into()))
                        .collect();
                    row.extend((0..2).map(|_| Value::Long(rng.gen_range(0..5))));
                    row
                })
                .collect(),
        })
        .collect();
    database(tables)
}

#[test]
fn criterion_3_metric_oracles() {
    report(3, "metric oracle equivalence", || {
        let schema = toy_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..200 {
            let (t, p) = (toy_query(&mut rng), toy_query(&mut rng));
            let s = offline_scores(&t.text, &p.text, &schema);
            ensure!(s.syntax == 1.0 && s.semantic == 1.0, "pair {i}: {} is not valid", p.text);
            let truth_tables = dedup(&t.tables);
            let pred_tables = dedup(&p.tables);
            let table = if truth_tables.iter().all(|x| pred_tables.contains(x)) {
                truth_tables.len() as f64 / pred_tables.len() as f64
            } else {
                0.0
            };
            ensure!(s.table == table, "pair {i} table: {} vs {table}", s.table);
            let fc = jaccard_oracle(&t.columns, &p.columns);
            ensure!(s.filter_col == fc, "pair {i} filter_col: {} vs {fc}", s.filter_col);
            let fl = jaccard_oracle(&t.literals, &p.literals);
            ensure!(s.filter_lit == fl, "pair {i} filter_lit: {} vs {fl}", s.filter_lit);
        }

        for i in 0..100 {
            let db = toy_database(&mut rng);
            let (t, p) = (toy_query(&mut rng), toy_query(&mut rng));
            let out = online_scores(&t.text, &p.text, &schema, &db).map_err(|e| e.to_string())?;
            let o = out.scores;
            ensure!(o.avg_exec == (o.row_exec + o.col_exec) / 2.0, "run {i}: avg identity broken");
            let run = |q: &str| execute(&parse(q).query.unwrap(), &db).unwrap();
            let (rt, rp) = (run(&t.text), run(&p.text));
            let sigs = |r: &kql::engine::ResultTable| row_signatures(r).into_iter().collect::<Vec<_>>();
            let row = jaccard_oracle(&sigs(&rt), &sigs(&rp));
            ensure!(o.row_exec == row, "run {i} row: {} vs {row}", o.row_exec);
            let shared = rp.columns.iter().filter(|c| rt.columns.contains(c)).count();
            let col = shared as f64 / rp.columns.len() as f64;
            ensure!(o.col_exec == col, "run {i} col: {} vs {col}", o.col_exec);
        }
        Ok(())
    });
}

// ---- 4 ----

fn random_table(name: &str, rng: &mut ChaCha8Rng) -> DataTable {
    DataTable {
        name: name.to_string(),
        columns: vec![
            ("K1".into(), ColumnType::String),
            ("K2".into(), ColumnType::String),
            ("V".into(), ColumnType::Long),
        ],
        rows: (0..rng.gen_range(0..=50))
            .map(|_| {
                vec![
                    Value::String(["a", "b", "c", "d"][rng.gen_range(0..4)].into()),
                    Value::String(["x", "y"][rng.gen_range(0..2)].into()),
                    Value::Long(rng.gen_range(-3..15)),
                ]
            })
            .collect(),
    }
}

enum Pred {
    Gt(i64),
    Le(i64),
    K1Eq(&'static str),
    K2Ne(&'static str),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
    Not(Box<Pred>),
}

impl Pred {
    fn random(rng: &mut ChaCha8Rng, depth: usize) -> Pred {
        let leaf = depth == 0 || rng.gen_bool(0.4);
        if leaf {
            return match rng.gen_range(0..4) {
                0 => Pred::Gt(rng.gen_range(-3..15)),
                1 => Pred::Le(rng.gen_range(-3..15)),
                2 => Pred::K1Eq(["a", "b", "z"][rng.gen_range(0..3)]),
                _ => Pred::K2Ne(["x", "y"][rng.gen_range(0..2)]),
            };
        }
        match rng.gen_range(0..3) {
            0 => Pred::And(Box::new(Pred::random(rng, depth - 1)), Box::new(Pred::random(rng, depth - 1))),
            1 => Pred::Or(Box::new(Pred::random(rng, depth - 1)), Box::new(Pred::random(rng, depth - 1))),
            _ => Pred::Not(Box::new(Pred::random(rng, depth - 1))),
        }
    }

    fn text(&self) -> String {
        match self {
            Pred::Gt(n) => format!("V > {n}"),
            Pred::Le(n) => format!("V <= {n}"),
            Pred::K1Eq(s) => format!("K1 == \"{s}\""),
            Pred::K2Ne(s) => format!("K2 != \"{s}\""),
            Pred::And(a, b) => format!("({}) and ({})", a.text(), b.text()),
            Pred::Or(a, b) => format!("({}) or ({})", a.text(), b.text()),
            Pred::Not(a) => format!("not({})", a.text()),
        }
    }

    fn eval(&self, row: &[Value]) -> bool {
        let (Value::String(k1), Value::String(k2), Value::Long(v)) = (&row[0], &row[1], &row[2]) else {
            unreachable!("generated rows have no nulls")
        };
        match self {
            Pred::Gt(n) => v > n,
            Pred::Le(n) => v <= n,
            Pred::K1Eq(s) => k1 == s,
            Pred::K2Ne(s) => k2 != s,
            Pred::And(a, b) => a.eval(row) && b.eval(row),
            Pred::Or(a, b) => a.eval(row) || b.eval(row),
            Pred::Not(a) => !a.eval(row),
        }
    }
}

fn canonical_rows(rows: &[Vec<Value>]) -> Vec<String> {
    let mut v: Vec<String> = rows
        .iter()
        .map(|r| r.iter().map(Value::canonical).collect::<Vec<_>>().join("|"))
        .collect();
    v.sort();
    v
}

#[test]
fn criterion_4_engine_correctness() {
    report(4, "engine correctness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let run = |q: &str, db: &Database| execute(&parse(q).query.unwrap(), db).map_err(|e| format!("{q}: {e}"));
        for i in 0..100 {
            let t = random_table("T", &mut rng);
            let u = random_table("U", &mut rng);

            let mut counts: BTreeMap<String, i64> = BTreeMap::new();
            for r in &t.rows {
                *counts.entry(r[0].canonical()).or_default() += 1;
            }
            let mut joined = Vec::new();
            for a in &t.rows {
                for b in u.rows.iter().filter(|b| b[0] == a[0]) {
                    joined.push(a.iter().chain(b.iter()).cloned().collect::<Vec<_>>());
                }
            }
            let pred = Pred::random(&mut rng, 3);
            let kept: Vec<Vec<Value>> = t.rows.iter().filter(|r| pred.eval(r)).cloned().collect();

            let db = database(vec![t, u]);
            let r = run("T | summarize n = count() by K1", &db)?;
            let got: BTreeMap<String, i64> = r
                .rows
                .iter()
                .map(|row| match &row[1] {
                    Value::Long(n) => (row[0].canonical(), *n),
                    other => panic!("count returned {other:?}"),
                })
                .collect();
            ensure!(got.len() == r.rows.len(), "table {i}: duplicate groups");
            ensure!(got == counts, "table {i}: counts {got:?} vs {counts:?}");

            let j = run("T | join kind=inner (U) on K1", &db)?;
            ensure!(canonical_rows(&j.rows) == canonical_rows(&joined), "table {i}: join differs");

            let all = run("T", &db)?;
            let f = run(&format!("T | where {}", pred.text()), &db)?;
            ensure!(f.rows == kept, "table {i}: where {} kept the wrong rows", pred.text());
            ensure!(
                row_signatures(&f).is_subset(&row_signatures(&all)),
                "table {i}: filter added rows"
            );
        }
        let r = run("range x from 1 to 10 step 1 | summarize sum(x)", &Database::new())?;
        ensure!(r.rows == vec![vec![Value::Long(55)]], "range sum gave {:?}", r.rows);
        Ok(())
    });
}

// ---- 5 ----

#[derive(serde::Deserialize)]
struct RepairCase {
    rule: String,
    kql: String,
}

#[test]
fn criterion_5_repair_corpus() {
    report(5, "repair corpus", || {
        let catalog = defender();
        let schema = catalog.schema();
        let store = build_store(&catalog, &[], &DeterministicEmbedder).map_err(|e| e.to_string())?;
        let sub = Substitution::new(&store, &DeterministicEmbedder, 0.9);
        let opts = RepairOptions::default();
        let text = std::fs::read_to_string(fixture("repair/corpus.jsonl")).unwrap();
        let cases: Vec<RepairCase> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let mut per_rule: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &cases {
            *per_rule.entry(&c.rule).or_default() += 1;
            let out = repair(&c.kql, &schema, Some(&sub), &opts);
            ensure!(out.fixed && out.remaining.is_empty(), "{}: not fixed: {:?}", c.kql, out.remaining);
            let again = repair(&out.final_kql, &schema, Some(&sub), &opts);
            ensure!(
                again.final_kql == out.final_kql && again.applied_rules.is_empty(),
                "{}: repair is not idempotent",
                c.kql
            );
            let expected_rule = match c.rule.as_str() {
                "between" => Some("between-parens"),
                "extend" => Some("missing-extend"),
                "summarize" => Some("missing-summarize"),
                _ => None,
            };
            match expected_rule {
                Some(rule) => ensure!(
                    out.applied_rules.iter().any(|r| r.as_str() == rule),
                    "{}: applied {:?}",
                    c.kql,
                    out.applied_rules
                ),
                None => ensure!(
                    out.final_kql == c.kql && out.applied_rules.is_empty() && out.iterations == 0,
                    "{}: valid input was changed",
                    c.kql
                ),
            }
        }
        for rule in ["between", "extend", "summarize"] {
            let n = per_rule.get(rule).copied().unwrap_or(0);
            ensure!(n >= 10, "only {n} {rule} cases");
        }
        ensure!(per_rule.get("valid").copied().unwrap_or(0) > 0, "no valid cases");
        Ok(())
    });
}

// ---- 6 ----

#[test]
fn criterion_6_refiner() {
    report(6, "refiner behavior", || {
        let catalog = defender();
        let store = build_store(&catalog, &[], &DeterministicEmbedder).map_err(|e| e.to_string())?;
        let all = catalog.table_names();
        let names: Vec<String> = all.iter().cloned().collect();
        let nlqs = [
            "List all devices",
            "Failed logons by administrators in the last day",
            "Which alerts have high severity",
            "Show network connections to rare remote ports",
            "Emails with malicious attachments",
        ];
        let refine = |nlq: &str, scope: &BTreeSet<String>| {
            refine_schema(nlq, &catalog, scope, 9, 5, &store, &DeterministicEmbedder).map_err(|e| e.to_string())
        };
        for nlq in nlqs {
            let r = refine(nlq, &all)?;
            ensure!(r.tables.len() == 9, "{nlq}: {} tables", r.tables.len());
            let mut per_column: BTreeMap<(String, String), usize> = BTreeMap::new();
            for v in &r.candidate_values {
                *per_column.entry((v.table.clone(), v.column.clone())).or_default() += 1;
            }
            ensure!(per_column.values().all(|n| *n <= 5), "{nlq}: more than 5 values in a column");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..50 {
            let n = rng.gen_range(1..=29);
            let big: BTreeSet<String> = names.choose_multiple(&mut rng, n).cloned().collect();
            let big_list: Vec<&String> = big.iter().collect();
            let m = rng.gen_range(1..=big.len());
            let small: BTreeSet<String> = big_list
                .choose_multiple(&mut rng, m)
                .map(|s| (*s).clone())
                .collect();
            let nlq = nlqs[i % nlqs.len()];
            let rb = refine(nlq, &big)?;
            let rs = refine(nlq, &small)?;
            let tb: BTreeSet<String> = rb.table_names().into_iter().collect();
            let ts: BTreeSet<String> = rs.table_names().into_iter().collect();
            ensure!(tb.is_subset(&big) && ts.is_subset(&small), "set {i}: inaccessible table selected");
            ensure!(ts.len() == small.len().min(9), "set {i}: {} of {} tables", ts.len(), small.len());
            let kept: BTreeSet<String> = tb.intersection(&small).cloned().collect();
            ensure!(kept.is_subset(&ts), "set {i}: shrinking the scope dropped {kept:?} - {ts:?}");
            ensure!(
                rs.candidate_values.iter().all(|v| small.contains(&v.table)),
                "set {i}: values from an inaccessible table"
            );
        }
        Ok(())
    });
}

// ---- 7 ----

/// Name of the first table in a generation prompt's schema listing.
fn first_listed_table(prompt: &str) -> Option<String> {
    let schema = prompt.split("# Schema").nth(1)?;
    schema
        .lines()
        .find_map(|l| l.strip_prefix("Name: "))
        .map(|s| s.trim().to_string())
}

#[test]
fn criterion_7_synthesis_gates() {
    report(7, "synthesis gates", || {
        let catalog = defender();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let mut single = 0;
        for _ in 0..draws {
            let t = sample_tables(&catalog, &mut rng);
            match t.len() {
                1 => single += 1,
                2 => ensure!(t[0] != t[1], "same table drawn twice"),
                n => return Err(format!("{n} tables drawn")),
            }
        }
        let share = single as f64 / draws as f64;
        ensure!((share - 0.7).abs() <= 0.02, "one-table share {share}");

        let mut schema = Schema::new();
        schema.add_table(TableSchema::new(
            "T",
            vec![("A".into(), ColumnType::Long), ("B".into(), ColumnType::Long)],
        ));
        let primary = "T | where A > 1";
        let above = "T | where A > B";
        let below = "T | where B > B";
        ensure!(token_jaccard(primary, above) == 5.0 / 7.0, "expected 5/7");
        ensure!(token_jaccard(primary, below) == 4.0 / 7.0, "expected 4/7");
        ensure!(judge(primary, above, &schema, 0.7).0 == Verdict::Accepted, "5/7 rejected");
        ensure!(judge(primary, below, &schema, 0.7).0 == Verdict::RejectedSimilarity, "4/7 accepted");

        // The model answers `<table> | take 10`, explains it with a request
        // naming the table, and regenerates either the same query or, for
        // the Detect theme, `<table> | count`.
        let llm = FnClient(|req: &nl2kql::llm::LlmRequest| {
            let prompt = req.last_user();
            if prompt.starts_with("Explain") {
                let table = prompt.split("~~~kusto\n").nth(1).and_then(|s| s.split(' ').next()).unwrap_or("");
                return Ok(LlmResponse::text(format!("Show ten rows of {table}")));
            }
            let table = first_listed_table(prompt).unwrap_or_default();
            let body = if prompt.contains("Write the query for this request") && prompt.contains("Goal: Detect") {
                format!("{table} | count")
            } else {
                format!("{table} | take 10")
            };
            Ok(LlmResponse::text(format!("~~~kusto\n{body}\n~~~")))
        });
        let options = SynthOptions {
            count: 60,
            seed: 11,
            threshold: 0.7,
        };
        let run = synthesize(&catalog, &llm, &options, &[]);
        ensure!(run.counts.accepted > 0, "nothing accepted");
        ensure!(run.counts.rejected_similarity > 0, "nothing rejected for similarity");
        for c in &run.candidates {
            let score = c.token_jaccard.ok_or_else(|| format!("candidate {} has no score", c.index))?;
            match c.verdict {
                Verdict::Accepted => ensure!(score >= 0.7, "accepted {score}"),
                Verdict::RejectedSimilarity => ensure!(score < 0.7, "rejected {score}"),
                v => return Err(format!("candidate {} ended {v:?}", c.index)),
            }
        }
        ensure!(
            run.accepted.len() == run.counts.accepted - run.counts.duplicates,
            "accepted list does not match the counts"
        );
        let again = synthesize(&catalog, &llm, &options, &[]);
        ensure!(again == run, "synthesis is not reproducible for a fixed seed");
        let text = write_records(&run.accepted);
        ensure!(parse_records(&text).map_err(|e| e.to_string())? == run.accepted, "records do not round-trip");
        let db = load_fsdb(&text, &catalog, &DeterministicEmbedder, None).map_err(|e| e.to_string())?;
        ensure!(db.len() == run.accepted.len(), "reloaded {} shots", db.len());
        Ok(())
    });
}

// ---- 8 ----

fn eval_cli(out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nl2kql"))
        .args(["eval", "--repeats", "3", "--embedder", "deterministic", "--llm", "scripted"])
        .arg("--catalog")
        .arg(fixture("catalogs/defender.json"))
        .arg("--fsdb")
        .arg(fixture("fsdb/defender.jsonl"))
        .arg("--transcript")
        .arg(fixture("transcripts/defender_toy.jsonl"))
        .arg("--benchmark")
        .arg(fixture("benchmark/defender_toy.jsonl"))
        .arg("--data")
        .arg(fixture("data/defender"))
        .arg("--out")
        .arg(out)
        .env_remove("LLM_TRANSCRIPT")
        .output()
        .unwrap()
}

#[test]
fn criterion_8_end_to_end_golden() {
    report(8, "end-to-end golden", || {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        for path in [&a, &b] {
            let out = eval_cli(path);
            ensure!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
        }
        let first = std::fs::read(&a).unwrap();
        ensure!(first == std::fs::read(&b).unwrap(), "two runs differ");
        let golden = std::fs::read(fixture("golden/defender_toy_report.json")).unwrap();
        ensure!(first == golden, "report differs from fixtures/golden/defender_toy_report.json");

        let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
        ensure!(report["scored_samples"] == 20, "scored {}", report["scored_samples"]);
        let rows = report["repeat_rows"].as_array().unwrap();
        ensure!(rows.len() == 3, "{} repeat rows", rows.len());
        for r in rows {
            ensure!(r["mean"] == report["aggregate"], "repeat {} differs from the aggregate", r["repeat"]);
            ensure!(r["samples"] == rows[0]["samples"], "repeat {} scored differently", r["repeat"]);
        }
        Ok(())
    });
}

// ---- 9 ----

#[test]
fn criterion_9_ablation_plumbing() {
    report(9, "ablation plumbing", || {
        let catalog = defender();
        let fsdb_text = std::fs::read_to_string(fixture("fsdb/defender.jsonl")).unwrap();
        let nlqs: Vec<String> = parse_records(&fsdb_text).unwrap().into_iter().map(|r| r.nlq).collect();
        let store = build_store(&catalog, &nlqs, &DeterministicEmbedder).map_err(|e| e.to_string())?;
        let fsdb = load_fsdb(&fsdb_text, &catalog, &DeterministicEmbedder, Some(&store)).map_err(|e| e.to_string())?;
        let llm = ScriptedClient::from_path(&fixture("transcripts/defender_toy.jsonl")).map_err(|e| e.to_string())?;
        let all = catalog.table_names();
        let translate = |config: &RunConfig, nlq: &str, scope: &BTreeSet<String>| {
            Translator {
                catalog: &catalog,
                store: &store,
                fsdb: &fsdb,
                embedder: &DeterministicEmbedder,
                llm: &llm,
                config,
            }
            .translate(nlq, scope)
        };
        let base = RunConfig::default();
        let nlq = "List all devices";

        let full = translate(&base, nlq, &all);
        let rendered = &full.prompt.as_ref().ok_or("no prompt")?.rendered;
        ensure!(full.shot_indices.len() == 2 && !rendered.contains(NO_EXAMPLES), "default run lacks shots");
        let zero = translate(&RunConfig { f: 0, ..base.clone() }, nlq, &all);
        let rendered = &zero.prompt.as_ref().ok_or("no prompt")?.rendered;
        ensure!(zero.shot_indices.is_empty(), "zero-shot run used shots");
        ensure!(rendered.contains(NO_EXAMPLES), "zero-shot prompt lacks the no-examples marker");

        let scope: BTreeSet<String> = all.iter().take(14).cloned().collect();
        ensure!(full.tables.len() == 9, "default refiner kept {} tables", full.tables.len());
        let unrefined = translate(&RunConfig { t: Limit::All, ..base.clone() }, nlq, &scope);
        let kept: BTreeSet<String> = unrefined.tables.iter().cloned().collect();
        ensure!(kept == scope, "t=all kept {} of {} tables", kept.len(), scope.len());
        let schema = &unrefined.prompt.as_ref().ok_or("no prompt")?.sections[nl2kql::prompt::SCHEMA];
        for t in &scope {
            ensure!(schema.contains(&format!("Name: {t}\n")), "{t} missing from the prompt schema");
        }

        let nlq = "Show the day of each successful network connection";
        let repaired = translate(&base, nlq, &all);
        ensure!(repaired.fixed() == Some(true), "repair did not fix the scripted answer");
        ensure!(repaired.final_kql != repaired.extracted_kql, "repair changed nothing");
        let raw = translate(&RunConfig { repair: false, ..base.clone() }, nlq, &all);
        ensure!(raw.repair.is_none(), "repair ran while disabled");
        ensure!(raw.final_kql == raw.extracted_kql, "final query differs from the model output");
        let step = raw.trace.iter().find(|s| s.stage == Stage::Repair).ok_or("no repair trace")?;
        ensure!(step.status == StageStatus::Skipped, "repair stage is {:?}", step.status);
        Ok(())
    });
}
