//! Schema refinement: permission filtering, then the `t` tables most
//! similar to the request, with every column kept and the `v_n` most
//! similar values of each Enum column.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::catalog::{CatalogTable, DataCatalog};
use crate::embed::{
    embed_text, table_key, value_key, EmbedError, EmbeddingProvider, EmbeddingVector, EntryKind,
    VectorStore,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateValue {
    pub table: String,
    pub column: String,
    pub value: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedSchema {
    /// Selected tables, most similar first.
    pub tables: Vec<CatalogTable>,
    pub table_scores: Vec<f64>,
    /// Per Enum column of a selected table, at most `v_n` values, most
    /// similar first. Columns follow table and catalog order.
    pub candidate_values: Vec<CandidateValue>,
    #[serde(skip)]
    pub nlq_embedding: EmbeddingVector,
}

impl RefinedSchema {
    pub fn table_names(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("empty-permission-scope: no accessible table exists in the catalog")]
    EmptyPermissionScope,
    #[error("the vector store has no entry '{0}'; rebuild it for this catalog")]
    MissingEntry(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Refines `catalog` for `nlq`, embedding the request with `provider`.
pub fn refine_schema(
    nlq: &str,
    catalog: &DataCatalog,
    accessible: &BTreeSet<String>,
    t: usize,
    v_n: usize,
    store: &VectorStore,
    provider: &dyn EmbeddingProvider,
) -> Result<RefinedSchema, RefineError> {
    let scope: BTreeSet<&str> = catalog
        .tables
        .iter()
        .map(|t| t.name.as_str())
        .filter(|n| accessible.contains(*n))
        .collect();
    if scope.is_empty() {
        return Err(RefineError::EmptyPermissionScope);
    }
    let q = embed_text(provider, nlq)?;
    refine_with_embedding(q, catalog, &scope, t, v_n, store)
}

/// [`refine_schema`] with a precomputed request embedding. `scope` must
/// already be restricted to accessible catalog tables.
pub fn refine_with_embedding(
    q: EmbeddingVector,
    catalog: &DataCatalog,
    scope: &BTreeSet<&str>,
    t: usize,
    v_n: usize,
    store: &VectorStore,
) -> Result<RefinedSchema, RefineError> {
    if scope.is_empty() {
        return Err(RefineError::EmptyPermissionScope);
    }
    for name in scope {
        let key = table_key(name);
        if store.get(&key).is_none() {
            return Err(RefineError::MissingEntry(key));
        }
    }
    let ranked = store.top_k(&q, t.max(1), Some(EntryKind::Table), &|_, e| {
        scope.contains(e.payload.as_str())
    })?;
    let mut tables = Vec::new();
    let mut table_scores = Vec::new();
    for (key, score) in ranked {
        let name = &store.get(&key).expect("ranked key exists").payload;
        let table = catalog.table(name).expect("scope tables are in the catalog");
        tables.push(table.clone());
        table_scores.push(score);
    }

    let mut candidate_values = Vec::new();
    if v_n > 0 {
        for table in &tables {
            for col in table.columns.iter().filter(|c| c.is_enum()) {
                let keys: BTreeSet<String> = col
                    .enum_values()
                    .iter()
                    .map(|v| value_key(&table.name, &col.name, &v.value))
                    .collect();
                if let Some(missing) = keys.iter().find(|k| store.get(k).is_none()) {
                    return Err(RefineError::MissingEntry(missing.clone()));
                }
                let top = store.top_k(&q, v_n, Some(EntryKind::Value), &|k, _| keys.contains(k))?;
                for (key, score) in top {
                    let prefix = format!("value:{}.{}=", table.name, col.name);
                    candidate_values.push(CandidateValue {
                        table: table.name.clone(),
                        column: col.name.clone(),
                        value: key[prefix.len()..].to_string(),
                        score,
                    });
                }
            }
        }
    }
    Ok(RefinedSchema {
        tables,
        table_scores,
        candidate_values,
        nlq_embedding: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogColumn, CatalogValue, ENUM_FORMAT};
    use crate::embed::DeterministicEmbedder;
    use crate::stores::build_store;
    use kql::ColumnType;

    fn catalog() -> DataCatalog {
        let mut level = CatalogColumn::new("Level", ColumnType::String);
        level.format = Some(ENUM_FORMAT.into());
        level.values = Some(["High", "Low", "Medium", "None"].map(CatalogValue::new).to_vec());
        let table = |name: &str, desc: &str, cols: Vec<CatalogColumn>| CatalogTable {
            name: name.into(),
            description: desc.into(),
            columns: cols,
            extended_summary: None,
        };
        DataCatalog {
            database: "D".into(),
            tables: vec![
                table("Alpha", "alpha events", vec![CatalogColumn::new("A", ColumnType::Long), level]),
                table("Beta", "beta events", vec![CatalogColumn::new("B", ColumnType::Long)]),
                table("Gamma", "gamma events", vec![CatalogColumn::new("C", ColumnType::Long)]),
            ],
        }
    }

    fn names(s: &[&str]) -> BTreeSet<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn fewer_tables_than_t_returns_all() {
        let c = catalog();
        let store = build_store(&c, &[], &DeterministicEmbedder).unwrap();
        let r = refine_schema("alpha events", &c, &c.table_names(), 9, 5, &store, &DeterministicEmbedder).unwrap();
        assert_eq!(r.table_names()[0], "Alpha");
        assert_eq!(r.tables.len(), 3);
        assert_eq!(r.candidate_values.len(), 4);
        let r = refine_schema("alpha", &c, &c.table_names(), 9, 2, &store, &DeterministicEmbedder).unwrap();
        assert_eq!(r.candidate_values.len(), 2);
    }

    #[test]
    fn permission_filter_precedes_ranking() {
        let c = catalog();
        let store = build_store(&c, &[], &DeterministicEmbedder).unwrap();
        let r = refine_schema("alpha events", &c, &names(&["Beta"]), 9, 5, &store, &DeterministicEmbedder)
            .unwrap();
        assert_eq!(r.table_names(), vec!["Beta"]);
        assert!(r.candidate_values.is_empty());
        let err = refine_schema("x", &c, &names(&["Nope"]), 9, 5, &store, &DeterministicEmbedder);
        assert_eq!(err.unwrap_err(), RefineError::EmptyPermissionScope);
    }

    #[test]
    fn t_truncates() {
        let c = catalog();
        let store = build_store(&c, &[], &DeterministicEmbedder).unwrap();
        let r = refine_schema("gamma", &c, &c.table_names(), 1, 5, &store, &DeterministicEmbedder).unwrap();
        assert_eq!(r.table_names(), vec!["Gamma"]);
    }

    #[test]
    fn store_must_cover_catalog() {
        let c = catalog();
        let empty = VectorStore::new("x");
        let err = refine_schema("a", &c, &c.table_names(), 9, 5, &empty, &DeterministicEmbedder);
        assert_eq!(err.unwrap_err(), RefineError::MissingEntry("table:Alpha".into()));
    }
}
