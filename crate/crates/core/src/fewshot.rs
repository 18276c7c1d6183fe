//! The few-shot database and the selector: keep shots whose tables are
//! all accessible, then rank them by similarity to the request.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::DataCatalog;
use crate::embed::{
    cosine, embed_texts, fewshot_key, EmbedError, EmbeddingProvider, EmbeddingVector, VectorStore,
};

/// One JSONL record of a few-shot file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotRecord {
    pub nlq: String,
    pub kql: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShot {
    /// Position in the database file.
    pub index: usize,
    pub nlq: String,
    pub kql: String,
    pub nlq_embedding: EmbeddingVector,
    pub referenced_tables: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotDb {
    pub database: String,
    pub shots: Vec<FewShot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShotProblem {
    pub index: usize,
    pub problems: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error("few-shot line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{} invalid few-shot(s): {}", .0.len(), describe(.0))]
    Invalid(Vec<ShotProblem>),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn describe(problems: &[ShotProblem]) -> String {
    problems
        .iter()
        .map(|p| format!("#{} ({})", p.index, p.problems.join("; ")))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parses JSONL records, skipping blank lines.
pub fn parse_records(text: &str) -> Result<Vec<ShotRecord>, FewShotError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ShotRecord = serde_json::from_str(line).map_err(|e| FewShotError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_records(records: &[ShotRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Problems with one shot against the full catalog schema, empty when the
/// shot is valid.
pub fn check_shot(record: &ShotRecord, catalog: &DataCatalog) -> Vec<String> {
    let mut problems = Vec::new();
    if record.nlq.trim().is_empty() {
        problems.push("empty nlq".to_string());
    }
    let analysis = kql::analyze(&record.kql, &catalog.schema());
    if analysis.query.is_none() {
        problems.push("kql does not parse".to_string());
    }
    problems.extend(analysis.diagnostics.iter().map(|d| d.to_string()));
    problems
}

/// Loads a few-shot file, validating every shot and embedding every NLQ.
/// A store built with the same NLQs supplies vectors without provider
/// calls.
pub fn load_fsdb(
    text: &str,
    catalog: &DataCatalog,
    provider: &dyn EmbeddingProvider,
    store: Option<&VectorStore>,
) -> Result<FewShotDb, FewShotError> {
    let records = parse_records(text)?;
    let offenders: Vec<ShotProblem> = records
        .iter()
        .enumerate()
        .filter_map(|(index, r)| {
            let problems = check_shot(r, catalog);
            (!problems.is_empty()).then_some(ShotProblem { index, problems })
        })
        .collect();
    if !offenders.is_empty() {
        return Err(FewShotError::Invalid(offenders));
    }

    let mut vectors: Vec<Option<EmbeddingVector>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            store
                .and_then(|s| s.get(&fewshot_key(i)))
                .filter(|e| e.payload == r.nlq)
                .map(|e| e.vector.clone())
        })
        .collect();
    let missing: Vec<usize> = (0..records.len()).filter(|i| vectors[*i].is_none()).collect();
    if !missing.is_empty() {
        let texts: Vec<&str> = missing.iter().map(|i| records[*i].nlq.as_str()).collect();
        for (i, v) in missing.iter().zip(embed_texts(provider, &texts)?) {
            vectors[*i] = Some(v);
        }
    }

    let shots = records
        .into_iter()
        .zip(vectors)
        .enumerate()
        .map(|(index, (r, v))| {
            let query = kql::parse(&r.kql).query.expect("validated shots parse");
            FewShot {
                index,
                referenced_tables: kql::extract_tables(&query),
                nlq: r.nlq,
                kql: r.kql,
                nlq_embedding: v.expect("every shot embedded"),
            }
        })
        .collect();
    Ok(FewShotDb {
        database: catalog.database.clone(),
        shots,
    })
}

pub fn load_fsdb_path(
    path: &Path,
    catalog: &DataCatalog,
    provider: &dyn EmbeddingProvider,
    store: Option<&VectorStore>,
) -> Result<FewShotDb, FewShotError> {
    let text = std::fs::read_to_string(path).map_err(|source| FewShotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_fsdb(&text, catalog, provider, store)
}

impl FewShotDb {
    pub fn empty(database: impl Into<String>) -> Self {
        FewShotDb {
            database: database.into(),
            shots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }
}

/// Shots whose referenced tables are all accessible, in database order.
pub fn filter_schema_relevant<'a>(db: &'a FewShotDb, accessible: &BTreeSet<String>) -> Vec<&'a FewShot> {
    db.shots
        .iter()
        .filter(|s| s.referenced_tables.is_subset(accessible))
        .collect()
}

/// The `f` candidates most similar to `nlq_embedding`, ties broken by
/// database index.
pub fn select_by_embedding<'a>(
    nlq_embedding: &EmbeddingVector,
    candidates: &[&'a FewShot],
    f: usize,
) -> Result<Vec<&'a FewShot>, EmbedError> {
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        scored.push((cosine(nlq_embedding, &c.nlq_embedding)?, *c));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.index.cmp(&b.1.index)));
    Ok(scored.into_iter().take(f).map(|(_, s)| s).collect())
}

/// Embeds `nlq` and selects the top `f` candidates.
pub fn select_fewshots<'a>(
    nlq: &str,
    candidates: &[&'a FewShot],
    f: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<&'a FewShot>, EmbedError> {
    if f == 0 || candidates.is_empty() {
        return Ok(Vec::new());
    }
    let q = crate::embed::embed_text(provider, nlq)?;
    select_by_embedding(&q, candidates, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogColumn, CatalogTable};
    use crate::embed::DeterministicEmbedder;
    use kql::ColumnType;

    fn catalog() -> DataCatalog {
        let t = |n: &str| CatalogTable {
            name: n.into(),
            description: String::new(),
            columns: vec![CatalogColumn::new("A", ColumnType::Long)],
            extended_summary: None,
        };
        DataCatalog {
            database: "D".into(),
            tables: vec![t("T"), t("U")],
        }
    }

    const FSDB: &str = r#"{"nlq": "rows of t", "kql": "T | take 5"}
{"nlq": "rows of u", "kql": "U | where A > 1"}

{"nlq": "join t and u", "kql": "T | join kind=inner (U) on A"}
"#;

    #[test]
    fn loads_and_caches_tables() {
        let db = load_fsdb(FSDB, &catalog(), &DeterministicEmbedder, None).unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.shots[2].index, 2);
        assert_eq!(db.shots[2].referenced_tables, ["T", "U"].map(String::from).into());
    }

    #[test]
    fn invalid_shots_are_listed() {
        let text = format!("{FSDB}{}\n", r#"{"nlq": "bad", "kql": "Nope | take 1"}"#);
        match load_fsdb(&text, &catalog(), &DeterministicEmbedder, None) {
            Err(FewShotError::Invalid(p)) => {
                assert_eq!(p.len(), 1);
                assert_eq!(p[0].index, 3);
                assert!(p[0].problems[0].contains("unknown-table"));
            }
            other => panic!("{other:?}"),
        }
        let err = load_fsdb("{\"nlq\": 1}", &catalog(), &DeterministicEmbedder, None).unwrap_err();
        assert!(matches!(err, FewShotError::Format { line: 1, .. }));
    }

    #[test]
    fn relevance_and_selection() {
        let db = load_fsdb(FSDB, &catalog(), &DeterministicEmbedder, None).unwrap();
        let only_t: BTreeSet<String> = ["T".to_string()].into();
        let rel = filter_schema_relevant(&db, &only_t);
        assert_eq!(rel.iter().map(|s| s.index).collect::<Vec<_>>(), [0]);
        assert!(filter_schema_relevant(&db, &BTreeSet::new()).is_empty());

        let all: Vec<&FewShot> = db.shots.iter().collect();
        let sel = select_fewshots("join t and u", &all, 2, &DeterministicEmbedder).unwrap();
        assert_eq!(sel[0].index, 2);
        assert_eq!(sel.len(), 2);
        assert!(select_fewshots("x", &all, 0, &DeterministicEmbedder).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_index() {
        let db = load_fsdb(FSDB, &catalog(), &DeterministicEmbedder, None).unwrap();
        let rev: Vec<&FewShot> = db.shots.iter().rev().collect();
        let zero = EmbeddingVector::zeros(crate::embed::DETERMINISTIC_DIM);
        let sel = select_by_embedding(&zero, &rev, 3).unwrap();
        assert_eq!(sel.iter().map(|s| s.index).collect::<Vec<_>>(), [0, 1, 2]);
    }
}
