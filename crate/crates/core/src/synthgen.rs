//! Synthetic few-shot generation with round-trip validation.
//!
//! A candidate is a primary query generated for sampled tables and a
//! theme, an explanation of it, and a secondary query regenerated from
//! the explanation. Both queries must validate and their token sets must
//! overlap enough before the (explanation, primary query) pair is kept.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{schema_listing, DataCatalog};
use crate::fewshot::ShotRecord;
use crate::llm::{ChatClient, LlmError, LlmRequest};
use crate::pipeline::extract_kql;
use crate::prompt::{fill, template_section};

pub const GENERATE_TEMPLATE: &str = include_str!("../assets/synth_generate.md");
pub const EXPLAIN_TEMPLATE: &str = include_str!("../assets/synth_explain.md");

pub const ONE_TABLE_PROBABILITY: f64 = 0.7;
pub const SIMILAR_TYPES_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Theme {
    Explore,
    Expansion,
    Detect,
    Remediate,
    Report,
}

impl Theme {
    pub const ALL: [Theme; 5] = [
        Theme::Explore,
        Theme::Expansion,
        Theme::Detect,
        Theme::Remediate,
        Theme::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Theme::Explore => "Explore",
            Theme::Expansion => "Expansion",
            Theme::Detect => "Detect",
            Theme::Remediate => "Remediate",
            Theme::Report => "Report",
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            Theme::Explore => "Look for signs or hints of a security attack",
            Theme::Expansion => "Searches for additional contextual understanding for the scenario",
            Theme::Detect => "Look for events related to a security attack",
            Theme::Remediate => "Identify all evens for a given entity or asset",
            Theme::Report => "Provide summary statistics that helps with writing a report",
        }
    }
}

/// One or two table names. One table with probability 0.7; otherwise a
/// second table joins, picked uniformly from the other tables or, half of
/// the time, from the other tables sharing a column type with the first.
pub fn sample_tables(catalog: &DataCatalog, rng: &mut impl Rng) -> Vec<String> {
    let Some(first) = catalog.tables.choose(rng) else {
        return Vec::new();
    };
    let one = rng.gen_bool(ONE_TABLE_PROBABILITY);
    if one || catalog.tables.len() < 2 {
        return vec![first.name.clone()];
    }
    let others: Vec<_> = catalog.tables.iter().filter(|t| t.name != first.name).collect();
    let pool = if rng.gen_bool(SIMILAR_TYPES_PROBABILITY) {
        let types = first.column_types();
        let similar: Vec<_> = others
            .iter()
            .copied()
            .filter(|t| !t.column_types().is_disjoint(&types))
            .collect();
        if similar.is_empty() {
            others
        } else {
            similar
        }
    } else {
        others
    };
    let second = pool.choose(rng).expect("at least one other table");
    vec![first.name.clone(), second.name.clone()]
}

pub fn sample_theme(rng: &mut impl Rng) -> Theme {
    *Theme::ALL.choose(rng).expect("five themes")
}

/// Prompt asking for a query over `tables` for `theme`; with `request`,
/// the query must answer that request.
pub fn generation_prompt(catalog: &DataCatalog, tables: &[String], theme: Theme, request: Option<&str>) -> String {
    let schema = tables
        .iter()
        .filter_map(|t| catalog.table(t))
        .map(schema_listing)
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut s = BTreeMap::new();
    s.insert("THEME".to_string(), format!("{}: {}.", theme.name(), theme.instruction()));
    s.insert("SCHEMA".to_string(), schema);
    s.insert("SYNTAX".to_string(), template_section("Kusto Syntax").to_string());
    s.insert("PRACTICES".to_string(), template_section("Kusto Best practices").to_string());
    s.insert(
        "REQUEST".to_string(),
        request
            .map(|r| format!("\nWrite the query for this request:\n{}\n", r.trim()))
            .unwrap_or_default(),
    );
    fill(GENERATE_TEMPLATE, &s)
}

pub fn explain_prompt(kql: &str) -> String {
    let mut s = BTreeMap::new();
    s.insert("KQL".to_string(), kql.trim().to_string());
    fill(EXPLAIN_TEMPLATE, &s)
}

fn ask(llm: &dyn ChatClient, prompt: String) -> Result<String, LlmError> {
    let mut req = LlmRequest::prompt(prompt);
    req.model = llm.model();
    Ok(llm.complete(&req)?.text)
}

/// Extracted query of the model's answer; empty when the answer is empty.
pub fn generate_candidate(
    catalog: &DataCatalog,
    tables: &[String],
    theme: Theme,
    llm: &dyn ChatClient,
) -> Result<String, LlmError> {
    let text = ask(llm, generation_prompt(catalog, tables, theme, None))?;
    Ok(extract_kql(&text).unwrap_or_default())
}

/// Jaccard similarity of the sets of non-trivia token texts.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let set = |s: &str| -> BTreeSet<String> {
        kql::tokenize(s)
            .0
            .into_iter()
            .filter(|t| !t.kind.is_trivia())
            .map(|t| t.text.to_string())
            .collect()
    };
    jaccard(&set(a), &set(b))
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 1.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    RejectedSyntax,
    RejectedSemantic,
    RejectedSimilarity,
    /// The model could not be reached; not a rejection.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthCandidate {
    pub index: usize,
    pub tables: Vec<String>,
    pub theme: Theme,
    pub primary_kql: String,
    pub nlq: Option<String>,
    pub secondary_kql: Option<String>,
    pub token_jaccard: Option<f64>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// An accepted candidate whose NLQ repeats an earlier one.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
}

fn syntax_ok(kql: &str) -> bool {
    let p = kql::parse(kql);
    p.query.is_some() && p.diagnostics.is_empty()
}

/// Syntax, then semantics, then similarity.
pub fn judge(primary: &str, secondary: &str, schema: &kql::Schema, threshold: f64) -> (Verdict, f64) {
    let score = token_jaccard(primary, secondary);
    if !syntax_ok(primary) || !syntax_ok(secondary) {
        return (Verdict::RejectedSyntax, score);
    }
    if !kql::analyze(primary, schema).diagnostics.is_empty() || !kql::analyze(secondary, schema).diagnostics.is_empty() {
        return (Verdict::RejectedSemantic, score);
    }
    if score < threshold {
        return (Verdict::RejectedSimilarity, score);
    }
    (Verdict::Accepted, score)
}

/// Explains `primary`, regenerates a query from the explanation and
/// judges the pair. An invalid primary is rejected before any further
/// model call.
#[allow(clippy::too_many_arguments)]
pub fn round_trip(
    index: usize,
    catalog: &DataCatalog,
    schema: &kql::Schema,
    tables: &[String],
    theme: Theme,
    primary: String,
    llm: &dyn ChatClient,
    threshold: f64,
) -> SynthCandidate {
    let mut c = SynthCandidate {
        index,
        tables: tables.to_vec(),
        theme,
        primary_kql: primary,
        nlq: None,
        secondary_kql: None,
        token_jaccard: None,
        verdict: Verdict::Aborted,
        error: None,
        duplicate: false,
    };
    if !syntax_ok(&c.primary_kql) {
        c.verdict = Verdict::RejectedSyntax;
        return c;
    }
    if !kql::analyze(&c.primary_kql, schema).diagnostics.is_empty() {
        c.verdict = Verdict::RejectedSemantic;
        return c;
    }
    let nlq = match ask(llm, explain_prompt(&c.primary_kql)) {
        Ok(t) => t.split_whitespace().collect::<Vec<_>>().join(" "),
        Err(e) => {
            c.error = Some(e.to_string());
            return c;
        }
    };
    let secondary = match ask(llm, generation_prompt(catalog, tables, theme, Some(&nlq))) {
        Ok(t) => extract_kql(&t).unwrap_or_default(),
        Err(e) => {
            c.nlq = Some(nlq);
            c.error = Some(e.to_string());
            return c;
        }
    };
    let (verdict, score) = if nlq.is_empty() {
        (Verdict::RejectedSimilarity, token_jaccard(&c.primary_kql, &secondary))
    } else {
        judge(&c.primary_kql, &secondary, schema, threshold)
    };
    c.nlq = Some(nlq);
    c.secondary_kql = Some(secondary);
    c.token_jaccard = Some(score);
    c.verdict = verdict;
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthOptions {
    pub count: usize,
    pub seed: u64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerdictCounts {
    pub accepted: usize,
    pub rejected_syntax: usize,
    pub rejected_semantic: usize,
    pub rejected_similarity: usize,
    pub aborted: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub database: String,
    pub options: SynthOptions,
    pub counts: VerdictCounts,
    pub candidates: Vec<SynthCandidate>,
    /// Accepted pairs without duplicates, in candidate order.
    pub accepted: Vec<ShotRecord>,
}

/// The rng of candidate `index`: the master seed with its own stream, so
/// results do not depend on scheduling.
pub fn candidate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates `count` candidates concurrently and collects the accepted
/// ones. Accepted NLQs already in `existing` or seen earlier in this run
/// are dropped as duplicates.
pub fn synthesize(
    catalog: &DataCatalog,
    llm: &dyn ChatClient,
    options: &SynthOptions,
    existing: &[ShotRecord],
) -> SynthReport {
    let schema = catalog.schema();
    let mut candidates: Vec<SynthCandidate> = (0..options.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = candidate_rng(options.seed, i);
            let tables = sample_tables(catalog, &mut rng);
            let theme = sample_theme(&mut rng);
            match generate_candidate(catalog, &tables, theme, llm) {
                Ok(primary) => round_trip(i, catalog, &schema, &tables, theme, primary, llm, options.threshold),
                Err(e) => SynthCandidate {
                    index: i,
                    tables,
                    theme,
                    primary_kql: String::new(),
                    nlq: None,
                    secondary_kql: None,
                    token_jaccard: None,
                    verdict: Verdict::Aborted,
                    error: Some(e.to_string()),
                    duplicate: false,
                },
            }
        })
        .collect();

    let mut seen: BTreeSet<String> = existing.iter().map(|r| r.nlq.clone()).collect();
    let mut counts = VerdictCounts::default();
    let mut accepted = Vec::new();
    for c in &mut candidates {
        match c.verdict {
            Verdict::Accepted => counts.accepted += 1,
            Verdict::RejectedSyntax => counts.rejected_syntax += 1,
            Verdict::RejectedSemantic => counts.rejected_semantic += 1,
            Verdict::RejectedSimilarity => counts.rejected_similarity += 1,
            Verdict::Aborted => counts.aborted += 1,
        }
        if c.verdict != Verdict::Accepted {
            continue;
        }
        let nlq = c.nlq.clone().expect("accepted candidates have an nlq");
        if !seen.insert(nlq.clone()) {
            c.duplicate = true;
            counts.duplicates += 1;
            continue;
        }
        accepted.push(ShotRecord {
            nlq,
            kql: c.primary_kql.clone(),
        });
    }
    SynthReport {
        database: catalog.database.clone(),
        options: options.clone(),
        counts,
        candidates,
        accepted,
    }
}
