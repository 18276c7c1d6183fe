//! The inference pipeline: refine the schema, select few-shots, build the
//! prompt, ask the model, extract the query and repair it.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::catalog::DataCatalog;
use crate::config::{RunConfig, ShotMode};
use crate::embed::{EmbeddingProvider, VectorStore};
use crate::fewshot::{filter_schema_relevant, select_by_embedding, FewShot, FewShotDb};
use crate::llm::{ChatClient, LlmRequest};
use crate::prompt::{build_prompt, PromptBundle};
use crate::refine::refine_schema;
use crate::repair::{repair, RepairOptions, RepairOutcome, Substitution};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("empty-completion: the model returned no text")]
    EmptyCompletion,
}

/// Opening fence of a block: the fence characters and the info string.
fn fence_open(line: &str) -> Option<(&str, &str)> {
    let t = line.trim_start();
    for marker in ["```", "~~~"] {
        if let Some(rest) = t.strip_prefix(marker) {
            let ch = &marker[..1];
            let extra = rest.len() - rest.trim_start_matches(ch).len();
            let fence = &t[..3 + extra];
            return Some((fence, rest.trim_start_matches(ch).trim()));
        }
    }
    None
}

/// The query inside a model response: the last block labelled `kusto`
/// (or `kql`), else the last unlabelled block, else the whole text.
pub fn extract_kql(text: &str) -> Result<String, ExtractError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ExtractError::EmptyCompletion);
    }
    let mut labelled = None;
    let mut unlabelled = None;
    let mut lines = trimmed.lines();
    while let Some(line) = lines.next() {
        let Some((fence, info)) = fence_open(line) else { continue };
        let mut body = Vec::new();
        for l in lines.by_ref() {
            let t = l.trim();
            if t.starts_with(fence) && t.trim_start_matches(&fence[..1]).is_empty() {
                break;
            }
            body.push(l);
        }
        let content = body.join("\n").trim().to_string();
        let label = info.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
        match label.as_str() {
            "kusto" | "kql" => labelled = Some(content),
            "" => unlabelled = Some(content),
            _ => {}
        }
    }
    let out = labelled.or(unlabelled).unwrap_or_else(|| trimmed.to_string());
    if out.is_empty() {
        return Err(ExtractError::EmptyCompletion);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Refine,
    SelectShots,
    BuildPrompt,
    Complete,
    Extract,
    Repair,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Refine,
        Stage::SelectShots,
        Stage::BuildPrompt,
        Stage::Complete,
        Stage::Extract,
        Stage::Repair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Refine => "refine",
            Stage::SelectShots => "select-shots",
            Stage::BuildPrompt => "build-prompt",
            Stage::Complete => "complete",
            Stage::Extract => "extract",
            Stage::Repair => "repair",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub status: StageStatus,
    pub micros: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationResult {
    pub nlq: String,
    /// Tables kept by the schema refiner, most similar first.
    pub tables: Vec<String>,
    pub shot_indices: Vec<usize>,
    #[serde(skip)]
    pub prompt: Option<PromptBundle>,
    pub prompt_tokens: usize,
    pub raw_completion: Option<String>,
    pub extracted_kql: Option<String>,
    pub repair: Option<RepairOutcome>,
    /// Repaired query, or the extracted one when repair is off.
    pub final_kql: Option<String>,
    pub error: Option<StageError>,
    pub trace: Vec<StageTrace>,
}

impl TranslationResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.final_kql.is_some()
    }

    /// True when the final query has no diagnostics. Unknown when repair
    /// was skipped.
    pub fn fixed(&self) -> Option<bool> {
        self.repair.as_ref().map(|r| r.fixed)
    }

    /// A copy with all timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        out.trace.iter_mut().for_each(|t| t.micros = 0);
        out
    }
}

/// Everything a translation reads. All of it is shared and read-only.
#[derive(Clone, Copy)]
pub struct Translator<'a> {
    pub catalog: &'a DataCatalog,
    pub store: &'a VectorStore,
    pub fsdb: &'a FewShotDb,
    pub embedder: &'a dyn EmbeddingProvider,
    pub llm: &'a dyn ChatClient,
    pub config: &'a RunConfig,
}

struct Tracer {
    trace: Vec<StageTrace>,
    started: Instant,
}

impl Tracer {
    fn finish(&mut self, stage: Stage, status: StageStatus) {
        let now = Instant::now();
        self.trace.push(StageTrace {
            stage,
            status,
            micros: now.duration_since(self.started).as_micros() as u64,
        });
        self.started = now;
    }
}

impl Translator<'_> {
    pub fn translate(&self, nlq: &str, accessible: &BTreeSet<String>) -> TranslationResult {
        let mut r = TranslationResult {
            nlq: nlq.to_string(),
            tables: Vec::new(),
            shot_indices: Vec::new(),
            prompt: None,
            prompt_tokens: 0,
            raw_completion: None,
            extracted_kql: None,
            repair: None,
            final_kql: None,
            error: None,
            trace: Vec::new(),
        };
        let mut tracer = Tracer {
            trace: Vec::new(),
            started: Instant::now(),
        };
        self.run(nlq, accessible, &mut r, &mut tracer);
        for stage in Stage::ALL {
            if !tracer.trace.iter().any(|t| t.stage == stage) {
                tracer.trace.push(StageTrace {
                    stage,
                    status: StageStatus::Skipped,
                    micros: 0,
                });
            }
        }
        r.trace = tracer.trace;
        r
    }

    fn run(&self, nlq: &str, accessible: &BTreeSet<String>, r: &mut TranslationResult, tracer: &mut Tracer) {
        let fail = |r: &mut TranslationResult, tracer: &mut Tracer, stage: Stage, message: String| {
            tracer.finish(stage, StageStatus::Failed);
            r.error = Some(StageError { stage, message });
        };
        let cfg = self.config;

        let refined = match refine_schema(
            nlq,
            self.catalog,
            accessible,
            cfg.t.get(),
            cfg.v_n,
            self.store,
            self.embedder,
        ) {
            Ok(x) => x,
            Err(e) => return fail(r, tracer, Stage::Refine, e.to_string()),
        };
        r.tables = refined.table_names();
        tracer.finish(Stage::Refine, StageStatus::Ok);

        let relevant = filter_schema_relevant(self.fsdb, accessible);
        let shots: Vec<&FewShot> = match cfg.shot_mode {
            _ if cfg.f == 0 => Vec::new(),
            ShotMode::All => relevant,
            ShotMode::Similar => match select_by_embedding(&refined.nlq_embedding, &relevant, cfg.f) {
                Ok(s) => s,
                Err(e) => return fail(r, tracer, Stage::SelectShots, e.to_string()),
            },
        };
        r.shot_indices = shots.iter().map(|s| s.index).collect();
        tracer.finish(Stage::SelectShots, StageStatus::Ok);

        let bundle = build_prompt(&refined, &shots, nlq);
        if bundle.exceeds(cfg.token_warn_limit) {
            log::warn!(
                "prompt for {nlq:?} is about {} tokens, above the {} warning limit",
                bundle.token_estimate,
                cfg.token_warn_limit
            );
        }
        r.prompt_tokens = bundle.token_estimate;
        let mut request = LlmRequest::prompt(bundle.rendered.clone());
        request.model = self.llm.model();
        r.prompt = Some(bundle);
        tracer.finish(Stage::BuildPrompt, StageStatus::Ok);

        let response = match self.llm.complete(&request) {
            Ok(x) => x,
            Err(e) => return fail(r, tracer, Stage::Complete, e.to_string()),
        };
        r.raw_completion = Some(response.text.clone());
        tracer.finish(Stage::Complete, StageStatus::Ok);

        let kql = match extract_kql(&response.text) {
            Ok(x) => x,
            Err(e) => return fail(r, tracer, Stage::Extract, e.to_string()),
        };
        r.extracted_kql = Some(kql.clone());
        tracer.finish(Stage::Extract, StageStatus::Ok);

        if !cfg.repair {
            r.final_kql = Some(kql);
            tracer.finish(Stage::Repair, StageStatus::Skipped);
            return;
        }
        let schema = self.catalog.schema_for(accessible);
        let sub = Substitution::new(self.store, self.embedder, cfg.substitution_threshold);
        let outcome = repair(
            &kql,
            &schema,
            Some(&sub),
            &RepairOptions {
                max_iterations: cfg.max_iterations,
                substitution_threshold: cfg.substitution_threshold,
            },
        );
        r.final_kql = Some(outcome.final_kql.clone());
        r.repair = Some(outcome);
        tracer.finish(Stage::Repair, StageStatus::Ok);
    }
}

/// One-call form of [`Translator::translate`].
#[allow(clippy::too_many_arguments)]
pub fn translate(
    nlq: &str,
    catalog: &DataCatalog,
    accessible: &BTreeSet<String>,
    fsdb: &FewShotDb,
    store: &VectorStore,
    config: &RunConfig,
    llm: &dyn ChatClient,
    embedder: &dyn EmbeddingProvider,
) -> TranslationResult {
    Translator {
        catalog,
        store,
        fsdb,
        embedder,
        llm,
        config,
    }
    .translate(nlq, accessible)
}
