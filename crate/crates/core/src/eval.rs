//! Offline and online metrics and the benchmark harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use kql::engine::{execute, result_columns, row_signatures, Database};
use kql::{extract_filter_columns, extract_filter_literals, extract_tables, Schema};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::synthgen::jaccard;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSample {
    pub nlq: String,
    pub kql: String,
    pub database: String,
}

#[derive(Debug, thiserror::Error)]
#[error("benchmark line {line}: {message}")]
pub struct BenchmarkFormatError {
    pub line: usize,
    pub message: String,
}

/// One JSON record per non-blank line.
pub fn parse_benchmark(text: &str) -> Result<Vec<BenchmarkSample>, BenchmarkFormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| BenchmarkFormatError {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OfflineScores {
    pub syntax: f64,
    pub semantic: f64,
    pub table: f64,
    pub filter_col: f64,
    pub filter_lit: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OnlineScores {
    pub row_exec: f64,
    pub col_exec: f64,
    pub avg_exec: f64,
}

/// All eight per-sample scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Scores {
    pub syntax: f64,
    pub semantic: f64,
    pub table: f64,
    pub filter_col: f64,
    pub filter_lit: f64,
    pub row_exec: f64,
    pub col_exec: f64,
    pub avg_exec: f64,
}

impl Scores {
    pub const HEADERS: [&'static str; 8] = [
        "Syntax",
        "Semantic",
        "Table",
        "Filter_col",
        "Filter_lit",
        "Row",
        "Column",
        "Avg",
    ];

    pub fn combine(off: OfflineScores, on: OnlineScores) -> Self {
        Scores {
            syntax: off.syntax,
            semantic: off.semantic,
            table: off.table,
            filter_col: off.filter_col,
            filter_lit: off.filter_lit,
            row_exec: on.row_exec,
            col_exec: on.col_exec,
            avg_exec: on.avg_exec,
        }
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.syntax,
            self.semantic,
            self.table,
            self.filter_col,
            self.filter_lit,
            self.row_exec,
            self.col_exec,
            self.avg_exec,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        Scores {
            syntax: v[0],
            semantic: v[1],
            table: v[2],
            filter_col: v[3],
            filter_lit: v[4],
            row_exec: v[5],
            col_exec: v[6],
            avg_exec: v[7],
        }
    }

    /// Per-metric arithmetic mean; zeros for an empty slice. Computed as
    /// the first value plus the mean deviation from it, so equal inputs
    /// give back exactly that value.
    pub fn mean(items: &[Scores]) -> Scores {
        let Some(first) = items.first() else {
            return Scores::default();
        };
        let base = first.values();
        let mut out = [0.0; 8];
        for (m, slot) in out.iter_mut().enumerate() {
            let column = items.iter().map(|s| s.values()[m]);
            let (lo, hi) = column.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let dev: f64 = column.map(|v| v - base[m]).sum::<f64>() / items.len() as f64;
            *slot = (base[m] + dev).clamp(lo, hi);
        }
        Scores::from_values(out)
    }
}

/// `|T(q)| / |T(q̂)|` when every ground-truth table is used by the
/// prediction, else 0.
pub fn table_score(truth: &BTreeSet<String>, predicted: &BTreeSet<String>) -> f64 {
    if predicted.is_empty() || !truth.is_subset(predicted) {
        return 0.0;
    }
    truth.intersection(predicted).count() as f64 / predicted.len() as f64
}

/// Share of the predicted result columns that the ground truth also
/// returns. 0 when the prediction has no columns.
pub fn column_proportion(truth: &BTreeSet<String>, predicted: &BTreeSet<String>) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    truth.intersection(predicted).count() as f64 / predicted.len() as f64
}

/// Syntax, Semantic, Table, Filter_col and Filter_lit of `predicted`
/// against the ground truth `truth`. Table and filter scores use whatever
/// query the parser recovers from `predicted`, and are 0 without one.
pub fn offline_scores(truth: &str, predicted: &str, schema: &Schema) -> OfflineScores {
    let truth_q = kql::parse(truth).query;
    let parsed = kql::parse(predicted);
    let syntax = parsed.query.is_some() && parsed.diagnostics.is_empty();
    let semantic = syntax && kql::analyze(predicted, schema).diagnostics.is_empty();
    let (Some(t), Some(p)) = (truth_q, parsed.query) else {
        return OfflineScores {
            syntax: syntax as u8 as f64,
            semantic: semantic as u8 as f64,
            ..Default::default()
        };
    };
    OfflineScores {
        syntax: syntax as u8 as f64,
        semantic: semantic as u8 as f64,
        table: table_score(&extract_tables(&t), &extract_tables(&p)),
        filter_col: jaccard(&extract_filter_columns(&t), &extract_filter_columns(&p)),
        filter_lit: jaccard(&extract_filter_literals(&t), &extract_filter_literals(&p)),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GroundTruthError {
    #[error("ground truth has diagnostics: {0}")]
    Invalid(String),
    #[error("ground truth fails to execute: {0}")]
    Execution(String),
}

/// Online scores plus a note when both results were empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutcome {
    pub scores: OnlineScores,
    pub flags: Vec<String>,
}

pub const FLAG_BOTH_EMPTY: &str = "both-results-empty";
pub const FLAG_PREDICTION_FAILED: &str = "prediction-execution-failed";
pub const FLAG_TRANSLATION_FAILED: &str = "translation-failed";

fn run(text: &str, schema: &Schema, db: &Database) -> Result<kql::engine::ResultTable, String> {
    let a = kql::analyze(text, schema);
    if let Some(d) = a.diagnostics.first() {
        return Err(d.to_string());
    }
    let q = a.query.ok_or_else(|| "no query".to_string())?;
    execute(&q, db).map_err(|e| e.to_string())
}

/// Row, Column and Avg execution scores. The ground truth must validate
/// and run; a prediction that does not scores 0 on all three.
pub fn online_scores(
    truth: &str,
    predicted: &str,
    schema: &Schema,
    db: &Database,
) -> Result<OnlineOutcome, GroundTruthError> {
    let a = kql::analyze(truth, schema);
    if let Some(d) = a.diagnostics.first() {
        return Err(GroundTruthError::Invalid(d.to_string()));
    }
    let q = a.query.ok_or_else(|| GroundTruthError::Invalid("no query".into()))?;
    let expected = execute(&q, db).map_err(|e| GroundTruthError::Execution(e.to_string()))?;
    let got = match run(predicted, schema, db) {
        Ok(r) => r,
        Err(e) => {
            return Ok(OnlineOutcome {
                scores: OnlineScores::default(),
                flags: vec![format!("{FLAG_PREDICTION_FAILED}: {e}")],
            })
        }
    };
    let (re, rg) = (row_signatures(&expected), row_signatures(&got));
    let mut flags = Vec::new();
    if re.is_empty() && rg.is_empty() {
        flags.push(FLAG_BOTH_EMPTY.to_string());
    }
    let row_exec = jaccard(&re, &rg);
    let col_exec = column_proportion(&result_columns(&expected), &result_columns(&got));
    Ok(OnlineOutcome {
        scores: OnlineScores {
            row_exec,
            col_exec,
            avg_exec: (row_exec + col_exec) / 2.0,
        },
        flags,
    })
}

/// Schema and data for one benchmark database.
pub struct EvalEnv {
    pub schema: Schema,
    pub db: Database,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedSample {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    pub index: usize,
    pub predicted_kql: Option<String>,
    pub scores: Scores,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatReport {
    /// 1-based.
    pub repeat: usize,
    pub mean: Scores,
    pub samples: Vec<SampleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    /// Free-form run settings, recorded as given.
    pub config: serde_json::Value,
    pub repeats: usize,
    pub scored_samples: usize,
    pub excluded: Vec<ExcludedSample>,
    pub aggregate: Scores,
    pub repeat_rows: Vec<RepeatReport>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per repeat and a final mean row, columns in the order of
    /// [`Scores::HEADERS`].
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Run |");
        for h in Scores::HEADERS {
            let _ = write!(out, " {h} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(Scores::HEADERS.len()));
        out.push('\n');
        let mut row = |label: String, s: &Scores| {
            let _ = write!(out, "| {label} |");
            for v in s.values() {
                let _ = write!(out, " {v:.4} |");
            }
            out.push('\n');
        };
        for r in &self.repeat_rows {
            row(format!("repeat {}", r.repeat), &r.mean);
        }
        row("mean".into(), &self.aggregate);
        out
    }
}

/// Translates and scores every sample `repeats` times. `translate` maps a
/// sample to the predicted query or a failure message; failures score 0
/// everywhere and are flagged. Samples whose database is unknown or whose
/// ground truth does not validate and run are excluded.
pub fn run_benchmark(
    samples: &[BenchmarkSample],
    translate: &(dyn Fn(&BenchmarkSample) -> Result<String, String> + Sync),
    envs: &BTreeMap<String, EvalEnv>,
    repeats: usize,
    config: serde_json::Value,
) -> MetricReport {
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let reason = match envs.get(&s.database) {
            None => Some(format!("unknown database '{}'", s.database)),
            Some(env) => online_scores(&s.kql, &s.kql, &env.schema, &env.db).err().map(|e| e.to_string()),
        };
        match reason {
            Some(reason) => {
                log::warn!("benchmark sample {i} excluded: {reason}");
                excluded.push(ExcludedSample { index: i, reason });
            }
            None => kept.push(i),
        }
    }

    let repeat_rows: Vec<RepeatReport> = (1..=repeats.max(1))
        .map(|repeat| {
            let results: Vec<SampleResult> = kept
                .par_iter()
                .map(|&i| score_sample(i, &samples[i], translate, &envs[&samples[i].database]))
                .collect();
            let scores: Vec<Scores> = results.iter().map(|r| r.scores).collect();
            RepeatReport {
                repeat,
                mean: Scores::mean(&scores),
                samples: results,
            }
        })
        .collect();
    let means: Vec<Scores> = repeat_rows.iter().map(|r| r.mean).collect();
    MetricReport {
        config,
        repeats: repeat_rows.len(),
        scored_samples: kept.len(),
        excluded,
        aggregate: Scores::mean(&means),
        repeat_rows,
    }
}

fn score_sample(
    index: usize,
    sample: &BenchmarkSample,
    translate: &(dyn Fn(&BenchmarkSample) -> Result<String, String> + Sync),
    env: &EvalEnv,
) -> SampleResult {
    let predicted = match translate(sample) {
        Ok(k) => k,
        Err(e) => {
            return SampleResult {
                index,
                predicted_kql: None,
                scores: Scores::default(),
                flags: vec![format!("{FLAG_TRANSLATION_FAILED}: {e}")],
            }
        }
    };
    let off = offline_scores(&sample.kql, &predicted, &env.schema);
    let on = online_scores(&sample.kql, &predicted, &env.schema, &env.db)
        .expect("ground truth checked before scoring");
    SampleResult {
        index,
        predicted_kql: Some(predicted),
        scores: Scores::combine(off, on.scores),
        flags: on.flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kql::engine::{DataTable, Value};
    use kql::{ColumnType, TableSchema};

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn env() -> EvalEnv {
        let mut db = Database::new();
        db.insert(
            DataTable {
                name: "T".into(),
                columns: vec![("A".into(), ColumnType::Long), ("B".into(), ColumnType::String)],
                rows: (1..=4)
                    .map(|i| vec![Value::Long(i), Value::String(format!("b{}", i % 2))])
                    .collect(),
            },
            "test",
        )
        .unwrap();
        let mut schema = Schema::new();
        schema.add_table(TableSchema::new(
            "T",
            vec![("A".into(), ColumnType::Long), ("B".into(), ColumnType::String)],
        ));
        schema.add_table(TableSchema::new("U", vec![("A".into(), ColumnType::Long)]));
        EvalEnv { schema, db }
    }

    #[test]
    fn table_score_examples() {
        assert_eq!(table_score(&set(&["DeviceInfo"]), &set(&["DeviceInfo", "DeviceEvents"])), 0.5);
        assert_eq!(table_score(&set(&["DeviceInfo"]), &set(&["DeviceEvents"])), 0.0);
        assert_eq!(table_score(&set(&["DeviceInfo", "DeviceEvents"]), &set(&["DeviceInfo"])), 0.0);
        assert_eq!(table_score(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn identity_scores_one() {
        let e = env();
        let q = "T | where A > 2 and B == 'b1' | project A";
        let off = offline_scores(q, q, &e.schema);
        assert_eq!(off, OfflineScores { syntax: 1.0, semantic: 1.0, table: 1.0, filter_col: 1.0, filter_lit: 1.0 });
        let on = online_scores(q, q, &e.schema, &e.db).unwrap();
        assert_eq!(on.scores, OnlineScores { row_exec: 1.0, col_exec: 1.0, avg_exec: 1.0 });
    }

    #[test]
    fn online_examples() {
        let e = env();
        let on = online_scores("T | where A > 2", "T", &e.schema, &e.db).unwrap();
        assert_eq!(on.scores.row_exec, 0.5);
        assert_eq!(on.scores.col_exec, 1.0);
        let on = online_scores("T | project A", "T | project A, B", &e.schema, &e.db).unwrap();
        assert_eq!(on.scores.col_exec, 0.5);
        let on = online_scores("T | where A > 9", "T | where A < 0", &e.schema, &e.db).unwrap();
        assert_eq!(on.scores.row_exec, 1.0);
        assert_eq!(on.flags, [FLAG_BOTH_EMPTY]);
        let on = online_scores("T", "T | where Nope > 1", &e.schema, &e.db).unwrap();
        assert_eq!(on.scores, OnlineScores::default());
        assert!(online_scores("Nope", "T", &e.schema, &e.db).is_err());
    }

    #[test]
    fn broken_prediction_keeps_best_effort_scores() {
        let e = env();
        let off = offline_scores("T | where A > 1", "T | where A > 1 |", &e.schema);
        assert_eq!(off.syntax, 0.0);
        assert_eq!(off.semantic, 0.0);
        assert_eq!(off.table, 1.0);
    }

    #[test]
    fn benchmark_averages_and_excludes() {
        let mut envs = BTreeMap::new();
        envs.insert("D".to_string(), env());
        let samples = vec![
            BenchmarkSample { nlq: "all".into(), kql: "T".into(), database: "D".into() },
            BenchmarkSample { nlq: "big".into(), kql: "T | where A > 2".into(), database: "D".into() },
            BenchmarkSample { nlq: "bad".into(), kql: "Nope".into(), database: "D".into() },
            BenchmarkSample { nlq: "other".into(), kql: "T".into(), database: "X".into() },
        ];
        let report = run_benchmark(
            &samples,
            &|s| if s.nlq == "all" { Ok("T".into()) } else { Err("no model".into()) },
            &envs,
            3,
            serde_json::json!({}),
        );
        assert_eq!(report.excluded.iter().map(|e| e.index).collect::<Vec<_>>(), [2, 3]);
        assert_eq!(report.scored_samples, 2);
        assert_eq!(report.aggregate.avg_exec, 0.5);
        assert!(report.repeat_rows.iter().all(|r| r.mean == report.aggregate));
        let md = report.to_markdown();
        assert!(md.starts_with("| Run | Syntax | Semantic | Table | Filter_col | Filter_lit | Row | Column | Avg |"));
    }
}
