//! Embedding providers and the cosine-similarity vector store.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::llm::with_retries;

pub const ENV_ENDPOINT: &str = "EMBED_ENDPOINT";
pub const ENV_MODEL: &str = "EMBED_MODEL";
pub const ENV_API_KEY: &str = "EMBED_API_KEY";

/// Dimension of [`deterministic_embed`] vectors.
pub const DETERMINISTIC_DIM: usize = 256;
pub const DETERMINISTIC_ID: &str = "deterministic-v1";

/// Inputs longer than this many characters are cut before being sent to
/// a provider.
pub const MAX_INPUT_CHARS: usize = 32_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding '{key}' failed: {message}")]
    Provider { key: String, message: String },
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("missing configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        EmbeddingVector {
            values: self.values.iter().map(|v| v / n).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either operand is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercase alphanumeric runs of `text`.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Hashed features of `text`: `w:<word>` for each word and `t:<trigram>`
/// for each character trigram of `#<word>#`.
pub fn features(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in words(text) {
        out.push(format!("w:{w}"));
        let padded: Vec<char> = std::iter::once('#')
            .chain(w.chars())
            .chain(std::iter::once('#'))
            .collect();
        for tri in padded.windows(3) {
            out.push(format!("t:{}", tri.iter().collect::<String>()));
        }
    }
    out
}

/// Signed bucket counts before normalization.
pub fn deterministic_counts(text: &str) -> Vec<i64> {
    let mut counts = vec![0i64; DETERMINISTIC_DIM];
    for f in features(text) {
        let bucket = (fnv1a64(f.as_bytes()) % DETERMINISTIC_DIM as u64) as usize;
        let sign = if fnv1a64(format!("s:{f}").as_bytes()) >> 63 == 0 {
            1
        } else {
            -1
        };
        counts[bucket] += sign;
    }
    counts
}

/// Hashed bag of words and trigrams, L2-normalized. Empty text gives the
/// zero vector.
pub fn deterministic_embed(text: &str) -> EmbeddingVector {
    EmbeddingVector::new(deterministic_counts(text).into_iter().map(|c| c as f64).collect())
        .normalized()
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier written to store files.
    fn id(&self) -> String;

    /// Raw vector for one text.
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError>;

    /// Raw vectors for several texts. Providers without a batch endpoint
    /// embed one text at a time.
    fn embed_raw_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| self.embed_raw(t)).collect()
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for &T {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        (**self).embed_raw(text)
    }
    fn embed_raw_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        (**self).embed_raw_batch(texts)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        (**self).embed_raw(text)
    }
    fn embed_raw_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        (**self).embed_raw_batch(texts)
    }
}

fn prepare(text: &str) -> Result<&str, EmbedError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    Ok(match t.char_indices().nth(MAX_INPUT_CHARS) {
        Some((i, _)) => &t[..i],
        None => t,
    })
}

fn finish(raw: Vec<f64>) -> Result<EmbeddingVector, EmbedError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    Ok(EmbeddingVector::new(raw).normalized())
}

/// Embeds trimmed, truncated `text` and normalizes the result.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    finish(provider.embed_raw(prepare(text)?)?)
}

/// Batch form of [`embed_text`].
pub fn embed_texts(
    provider: &dyn EmbeddingProvider,
    texts: &[&str],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let prepared = texts.iter().map(|t| prepare(t)).collect::<Result<Vec<_>, _>>()?;
    provider
        .embed_raw_batch(&prepared)?
        .into_iter()
        .map(finish)
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicEmbedder;

impl EmbeddingProvider for DeterministicEmbedder {
    fn id(&self) -> String {
        DETERMINISTIC_ID.into()
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(deterministic_counts(text).into_iter().map(|c| c as f64).collect())
    }
}

/// Returns fixed vectors for known texts.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEmbedder {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl ScriptedEmbedder {
    pub fn new(vectors: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        ScriptedEmbedder {
            vectors: vectors.into_iter().collect(),
        }
    }
}

impl EmbeddingProvider for ScriptedEmbedder {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.vectors.get(text).cloned().ok_or_else(|| EmbedError::Provider {
            key: text.to_string(),
            message: "no scripted vector".into(),
        })
    }
}

/// OpenAI-compatible embeddings endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    backoff: Duration,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Debug)]
enum HttpFailure {
    Transient(String),
    Fatal(String),
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: config.into(),
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `EMBED_ENDPOINT`, `EMBED_MODEL` and `EMBED_API_KEY`.
    pub fn from_env() -> Result<Self, EmbedError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| EmbedError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_default();
        Ok(Self::new(endpoint, model, std::env::var(ENV_API_KEY).ok()))
    }

    fn request(&self, input: &[&str]) -> Result<Vec<Vec<f64>>, HttpFailure> {
        let body = serde_json::json!({ "model": self.model, "input": input });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| HttpFailure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| HttpFailure::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(HttpFailure::Transient(format!("status {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(HttpFailure::Fatal(format!("status {status}: {text}")));
        }
        let mut parsed: EmbeddingResponse =
            serde_json::from_str(&text).map_err(|e| HttpFailure::Fatal(e.to_string()))?;
        if parsed.data.len() != input.len() {
            return Err(HttpFailure::Fatal(format!(
                "expected {} embeddings, got {}",
                input.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|d| d.index.unwrap_or(0));
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn with_retry(&self, input: &[&str]) -> Result<Vec<Vec<f64>>, HttpFailure> {
        with_retries(
            crate::llm::MAX_ATTEMPTS,
            self.backoff,
            |e| matches!(e, HttpFailure::Transient(_)),
            || self.request(input),
        )
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        match self.with_retry(&[text]) {
            Ok(mut v) => Ok(v.remove(0)),
            Err(HttpFailure::Transient(m) | HttpFailure::Fatal(m)) => Err(EmbedError::Provider {
                key: text.chars().take(80).collect(),
                message: m,
            }),
        }
    }

    /// Tries one batched call, then falls back to one call per text.
    fn embed_raw_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        match self.with_retry(texts) {
            Ok(v) => Ok(v),
            Err(e) => {
                log::warn!("batched embedding failed ({e:?}); embedding texts one by one");
                texts.iter().map(|t| self.embed_raw(t)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Table,
    Value,
    Column,
    Fewshot,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Table => "table",
            EntryKind::Value => "value",
            EntryKind::Column => "column",
            EntryKind::Fewshot => "fewshot",
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(EntryKind::Table),
            "value" => Ok(EntryKind::Value),
            "column" => Ok(EntryKind::Column),
            "fewshot" => Ok(EntryKind::Fewshot),
            other => Err(format!("unknown entry kind '{other}'")),
        }
    }
}

pub fn table_key(table: &str) -> String {
    format!("table:{table}")
}

pub fn column_key(table: &str, column: &str) -> String {
    format!("column:{table}.{column}")
}

pub fn value_key(table: &str, column: &str, value: &str) -> String {
    format!("value:{table}.{column}={value}")
}

pub fn fewshot_key(index: usize) -> String {
    format!("fewshot:{index}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub vector: EmbeddingVector,
    pub kind: EntryKind,
    /// What the entry points at: a table name, `table.column`,
    /// `table.column=value`, or few-shot NLQ text.
    pub payload: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),
    #[error("key '{key}': {source}")]
    Dimension {
        key: String,
        #[source]
        source: EmbedError,
    },
    #[error("store file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("store file: {0}")]
    Io(#[from] std::io::Error),
}

const STORE_MAGIC: &str = "nl2kql-vector-store v1";

/// Brute-force vector store. Every entry shares one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorStore {
    provider: String,
    dimension: Option<usize>,
    entries: BTreeMap<String, StoreEntry>,
}

impl VectorStore {
    pub fn new(provider: impl Into<String>) -> Self {
        VectorStore {
            provider: provider.into(),
            dimension: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&StoreEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &StoreEntry)> {
        self.entries.iter()
    }

    pub fn insert(
        &mut self,
        key: impl Into<String>,
        kind: EntryKind,
        payload: impl Into<String>,
        vector: EmbeddingVector,
    ) -> Result<(), StoreError> {
        let key = key.into();
        if self.entries.contains_key(&key) {
            return Err(StoreError::DuplicateKey(key));
        }
        match self.dimension {
            Some(d) if d != vector.dimension() => {
                return Err(StoreError::Dimension {
                    key,
                    source: EmbedError::DimensionMismatch(d, vector.dimension()),
                })
            }
            _ => self.dimension = Some(vector.dimension()),
        }
        self.entries.insert(
            key,
            StoreEntry {
                vector,
                kind,
                payload: payload.into(),
            },
        );
        Ok(())
    }

    /// Entries of `kind` (any kind when `None`) accepted by `filter`,
    /// ranked by cosine with `query` descending, then key ascending.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        kind: Option<EntryKind>,
        filter: &dyn Fn(&str, &StoreEntry) -> bool,
    ) -> Result<Vec<(String, f64)>, EmbedError> {
        let mut scored = Vec::new();
        for (key, e) in &self.entries {
            if kind.is_some_and(|k| k != e.kind) || !filter(key, e) {
                continue;
            }
            scored.push((key.clone(), cosine(query, &e.vector)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn write_to(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "{STORE_MAGIC}")?;
        writeln!(
            out,
            "dimension={}\tprovider={}\tcount={}",
            self.dimension.unwrap_or(0),
            escape(&self.provider),
            self.entries.len()
        )?;
        for (key, e) in &self.entries {
            let mut bytes = Vec::with_capacity(e.vector.dimension() * 8);
            for v in &e.vector.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                escape(key),
                e.kind,
                escape(&e.payload),
                B64.encode(&bytes)
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("store text is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let fail = |line: usize, message: String| StoreError::Format { line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == STORE_MAGIC => {}
            _ => return Err(fail(1, format!("expected '{STORE_MAGIC}'"))),
        }
        let header = lines.next().ok_or_else(|| fail(2, "missing header".into()))?.1;
        let mut dim = None;
        let mut provider = None;
        let mut count = None;
        for field in header.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| fail(2, format!("malformed header field '{field}'")))?;
            match k {
                "dimension" => dim = v.parse::<usize>().ok(),
                "provider" => provider = Some(unescape(v)),
                "count" => count = v.parse::<usize>().ok(),
                _ => return Err(fail(2, format!("unknown header field '{k}'"))),
            }
        }
        let (Some(dim), Some(provider), Some(count)) = (dim, provider, count) else {
            return Err(fail(2, "header needs dimension, provider and count".into()));
        };
        let mut store = VectorStore::new(provider);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let parts: Vec<&str> = line.split('\t').collect();
            let [key, kind, payload, vector] = parts[..] else {
                return Err(fail(n, format!("expected 4 fields, got {}", parts.len())));
            };
            let kind: EntryKind = kind.parse().map_err(|e| fail(n, e))?;
            let bytes = B64.decode(vector).map_err(|e| fail(n, e.to_string()))?;
            if bytes.len() != dim * 8 {
                return Err(fail(n, format!("vector has {} bytes, expected {}", bytes.len(), dim * 8)));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store
                .insert(unescape(key), kind, unescape(payload), EmbeddingVector::new(values))
                .map_err(|e| fail(n, e.to_string()))?;
        }
        if store.len() != count {
            return Err(fail(2, format!("header count {count} but {} records", store.len())));
        }
        if dim > 0 || count > 0 {
            store.dimension = Some(dim);
        }
        Ok(store)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}
