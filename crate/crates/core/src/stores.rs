//! Building the vector store for a catalog and a few-shot database.

use crate::catalog::{column_summary, value_summary, DataCatalog};
use crate::embed::{
    column_key, embed_texts, fewshot_key, table_key, value_key, EmbedError, EmbeddingProvider,
    EntryKind, VectorStore,
};

struct Pending {
    key: String,
    kind: EntryKind,
    payload: String,
    text: String,
}

const BATCH: usize = 64;

fn catalog_entries(catalog: &DataCatalog) -> Vec<Pending> {
    let mut out = Vec::new();
    for t in &catalog.tables {
        out.push(Pending {
            key: table_key(&t.name),
            kind: EntryKind::Table,
            payload: t.name.clone(),
            text: t.summary_text(),
        });
        for c in &t.columns {
            out.push(Pending {
                key: column_key(&t.name, &c.name),
                kind: EntryKind::Column,
                payload: format!("{}.{}", t.name, c.name),
                text: column_summary(c),
            });
            for v in c.enum_values() {
                out.push(Pending {
                    key: value_key(&t.name, &c.name, &v.value),
                    kind: EntryKind::Value,
                    payload: format!("{}.{}={}", t.name, c.name, v.value),
                    text: value_summary(&t.name, &c.name, v),
                });
            }
        }
    }
    out
}

/// Embeds every table summary, column and Enum value of `catalog`, plus
/// the NLQ of each few-shot in `shot_nlqs` (by position).
pub fn build_store(
    catalog: &DataCatalog,
    shot_nlqs: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorStore, EmbedError> {
    let mut pending = catalog_entries(catalog);
    pending.extend(shot_nlqs.iter().enumerate().map(|(i, nlq)| Pending {
        key: fewshot_key(i),
        kind: EntryKind::Fewshot,
        payload: nlq.clone(),
        text: nlq.clone(),
    }));
    let mut store = VectorStore::new(provider.id());
    for chunk in pending.chunks(BATCH) {
        let texts: Vec<&str> = chunk.iter().map(|p| p.text.as_str()).collect();
        let vectors = embed_texts(provider, &texts).map_err(|e| match e {
            EmbedError::Provider { message, .. } => EmbedError::Provider {
                key: chunk[0].key.clone(),
                message,
            },
            other => other,
        })?;
        for (p, v) in chunk.iter().zip(vectors) {
            store
                .insert(p.key.clone(), p.kind, p.payload.clone(), v)
                .map_err(|e| EmbedError::Provider {
                    key: p.key.clone(),
                    message: e.to_string(),
                })?;
        }
    }
    Ok(store)
}
