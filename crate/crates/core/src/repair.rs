//! Rule-based query repair.
//!
//! Each round parses and validates the query, applies the first rule
//! whose diagnostics are present, and keeps the edit only when the
//! diagnostic count does not grow. Rules run in a fixed order: structural
//! fixes first, identifier substitution last.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use kql::ast::{Expr, NamedExpr, Query, Source, Stage};
use kql::functions::is_aggregate;
use kql::naming::{default_name, output_names, uniquify};
use kql::{analyze, codes, output_columns, render, Diagnostic, ScopeEntry, Schema};
use serde::Serialize;

use crate::catalog::split_identifier;
use crate::embed::{
    column_key, cosine, embed_text, table_key, EmbedError, EmbeddingProvider, EmbeddingVector,
    VectorStore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    BetweenParens,
    MissingExtend,
    MissingSummarize,
    UndefinedIdentifier,
}

impl RuleId {
    pub const ORDER: [RuleId; 4] = [
        RuleId::BetweenParens,
        RuleId::MissingExtend,
        RuleId::MissingSummarize,
        RuleId::UndefinedIdentifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::BetweenParens => "between-parens",
            RuleId::MissingExtend => "missing-extend",
            RuleId::MissingSummarize => "missing-summarize",
            RuleId::UndefinedIdentifier => "undefined-identifier",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOptions {
    pub max_iterations: usize,
    pub substitution_threshold: f64,
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions {
            max_iterations: 3,
            substitution_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairOutcome {
    /// The repaired query when fixed, otherwise the input unchanged.
    pub final_kql: String,
    pub fixed: bool,
    pub applied_rules: Vec<RuleId>,
    /// Diagnostics of `final_kql`.
    pub remaining: Vec<Diagnostic>,
    pub iterations: usize,
    /// Rules switched off during the run, by rollback or provider failure.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub disabled_rules: Vec<RuleId>,
    /// Best partial repair when the query could not be fixed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attempted_kql: Option<String>,
}

/// Everything the identifier rule needs to score candidates.
pub struct Substitution<'a> {
    pub store: &'a VectorStore,
    pub provider: &'a dyn EmbeddingProvider,
    pub threshold: f64,
    cache: RefCell<HashMap<String, EmbeddingVector>>,
}

impl<'a> Substitution<'a> {
    pub fn new(store: &'a VectorStore, provider: &'a dyn EmbeddingProvider, threshold: f64) -> Self {
        Substitution {
            store,
            provider,
            threshold,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(v) = self.cache.borrow().get(text) {
            return Ok(v.clone());
        }
        let v = embed_text(self.provider, text)?;
        self.cache.borrow_mut().insert(text.to_string(), v.clone());
        Ok(v)
    }

    /// Text embedded for an identifier: its camel-case split.
    fn name_text(name: &str) -> String {
        let s = split_identifier(name);
        if s.is_empty() {
            name.to_string()
        } else {
            s
        }
    }

    /// Similarity of `bad` to a candidate: the better of the candidate's
    /// split name and its stored description embedding.
    fn score(&self, bad: &EmbeddingVector, candidate: &ScopeEntry, is_table: bool) -> Result<f64, EmbedError> {
        let mut best = cosine(bad, &self.embed(&Self::name_text(&candidate.name))?)?;
        let key = if is_table {
            Some(table_key(&candidate.name))
        } else {
            candidate.table.as_ref().map(|t| column_key(t, &candidate.name))
        };
        if let Some(entry) = key.and_then(|k| self.store.get(&k)) {
            if entry.vector.dimension() == bad.dimension() {
                best = best.max(cosine(bad, &entry.vector)?);
            }
        }
        Ok(best)
    }

    /// The candidate most similar to `bad` when its score reaches the
    /// threshold; ties go to the smaller name.
    pub fn substitute(
        &self,
        bad: &str,
        scope: &[ScopeEntry],
        is_table: bool,
    ) -> Result<Option<String>, EmbedError> {
        let bad_vec = self.embed(&Self::name_text(bad))?;
        let mut best: Option<(f64, &str)> = None;
        let mut seen = BTreeSet::new();
        for c in scope {
            if c.name == bad || !seen.insert((&c.name, &c.table)) {
                continue;
            }
            let s = self.score(&bad_vec, c, is_table)?;
            if s < self.threshold {
                continue;
            }
            best = match best {
                Some((bs, bn)) if bs > s || (bs == s && bn <= c.name.as_str()) => Some((bs, bn)),
                _ => Some((s, c.name.as_str())),
            };
        }
        Ok(best.map(|(_, n)| n.to_string()))
    }
}

/// Convenience wrapper for [`Substitution::substitute`].
pub fn substitute_identifier(
    bad: &str,
    scope: &[ScopeEntry],
    store: &VectorStore,
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<Option<String>, EmbedError> {
    Substitution::new(store, provider, threshold).substitute(bad, scope, false)
}

fn has_code(diags: &[Diagnostic], code: &str) -> bool {
    diags.iter().any(|d| d.code == code)
}

/// Applies `f` to every stage list in the query, nested ones included.
fn each_stage_list(q: &mut Query, f: &mut dyn FnMut(&mut Vec<Stage>)) {
    for b in &mut q.lets {
        if let kql::ast::LetValue::Tabular(sub) = &mut b.value {
            each_stage_list(sub, f);
        }
    }
    each_source(&mut q.source, f);
    f(&mut q.stages);
    for s in &mut q.stages {
        match s {
            Stage::Join { right, .. } => each_stage_list(right, f),
            Stage::Union(items) => items.iter_mut().for_each(|i| each_source(i, f)),
            Stage::MvApply { stages, .. } => f(stages),
            _ => {}
        }
    }
}

fn each_source(s: &mut Source, f: &mut dyn FnMut(&mut Vec<Stage>)) {
    match s {
        Source::Subquery(q) => each_stage_list(q, f),
        Source::Union(items) => items.iter_mut().for_each(|i| each_source(i, f)),
        Source::Table(_) | Source::Range { .. } => {}
    }
}

/// Wraps bare `| Name = expr` stages into `extend`.
pub fn fix_missing_extend(query: &Query) -> Option<Query> {
    let mut q = query.clone();
    let mut changed = false;
    each_stage_list(&mut q, &mut |stages| {
        for s in stages.iter_mut() {
            if let Stage::Assignment(items) = s {
                *s = Stage::Extend(items.clone());
                changed = true;
            }
        }
    });
    changed.then_some(q)
}

fn contains_aggregate(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |x| {
        if let Expr::Call { name, .. } = x {
            found |= is_aggregate(&name.name);
        }
    });
    found
}

/// Columns referenced by `e` outside aggregate calls, in order.
fn outer_columns(e: &Expr, out: &mut Vec<String>) {
    let mut stripped = e.clone();
    stripped.walk_mut(&mut |x| {
        if matches!(x, Expr::Call { name, .. } if is_aggregate(&name.name)) {
            *x = Expr::Literal(kql::ast::Literal::Bool(false));
        }
    });
    stripped.walk(&mut |x| {
        if let Expr::Column(id) = x {
            if !out.contains(&id.name) {
                out.push(id.name.clone());
            }
        }
    });
}

/// Replaces aggregate calls inside `e` with references to new summarize
/// columns, recording `(name, call)` pairs.
fn hoist_aggregates(e: &mut Expr, taken: &mut Vec<String>, hoisted: &mut Vec<NamedExpr>) {
    e.walk_mut(&mut |x| {
        if matches!(x, Expr::Call { name, .. } if is_aggregate(&name.name)) {
            let base = default_name(x).unwrap_or_else(|| "agg".to_string());
            let name = uniquify(&base, taken);
            taken.push(name.clone());
            hoisted.push(NamedExpr::named(name.clone(), x.clone()));
            *x = Expr::column(name);
        }
    });
}

/// Moves aggregates used outside `summarize` into one. The first
/// top-level stage holding such an aggregate is rewritten:
///
/// - `project` becomes `summarize` with its plain items as group keys;
/// - `extend` becomes `summarize` of its aggregate items, followed by an
///   `extend` of the others;
/// - any other stage gets a `summarize` inserted before it and refers to
///   the new columns instead.
///
/// Group keys are the input columns still referenced by the rewritten
/// stage and the stages after it.
pub fn fix_missing_summarize(query: &Query, schema: &Schema) -> Option<Query> {
    let idx = query.stages.iter().position(|s| {
        !matches!(s, Stage::Summarize { .. })
            && kql::extract::stage_exprs(s).into_iter().any(contains_aggregate)
    })?;
    let prefix = Query {
        lets: query.lets.clone(),
        source: query.source.clone(),
        stages: query.stages[..idx].to_vec(),
    };
    let input = output_columns(&prefix, schema)?;
    let later_columns = |from: usize, out: &mut Vec<String>| {
        for s in &query.stages[from..] {
            for e in kql::extract::stage_exprs(s) {
                outer_columns(e, out);
            }
            match s {
                Stage::ProjectAway(ids) => out.extend(ids.iter().map(|i| i.name.clone())),
                Stage::ProjectRename(pairs) => out.extend(pairs.iter().map(|(_, old)| old.name.clone())),
                _ => {}
            }
        }
    };
    let keys_from = |refs: Vec<String>, exclude: &[String]| -> Vec<NamedExpr> {
        let mut seen = BTreeSet::new();
        refs.into_iter()
            .filter(|c| input.contains(c) && !exclude.contains(c) && seen.insert(c.clone()))
            .map(|c| NamedExpr::unnamed(Expr::column(c)))
            .collect()
    };

    let mut out = query.clone();
    let stage = &query.stages[idx];
    let replacement: Vec<Stage> = match stage {
        Stage::Project(items) => {
            let (aggs, by): (Vec<NamedExpr>, Vec<NamedExpr>) =
                items.iter().cloned().partition(|i| contains_aggregate(&i.expr));
            vec![Stage::Summarize { aggregates: aggs, by }]
        }
        Stage::Extend(items) => {
            let (aggs, rest): (Vec<NamedExpr>, Vec<NamedExpr>) =
                items.iter().cloned().partition(|i| contains_aggregate(&i.expr));
            let agg_names = output_names(&aggs);
            let rest_names = output_names(&rest);
            let mut refs = Vec::new();
            for i in &rest {
                outer_columns(&i.expr, &mut refs);
            }
            later_columns(idx + 1, &mut refs);
            let exclude: Vec<String> = agg_names.into_iter().chain(rest_names).collect();
            let by = keys_from(refs, &exclude);
            let mut v = vec![Stage::Summarize { aggregates: aggs, by }];
            if !rest.is_empty() {
                v.push(Stage::Extend(rest));
            }
            v
        }
        other => {
            let mut rewritten = other.clone();
            let mut taken = input.clone();
            let mut hoisted = Vec::new();
            match &mut rewritten {
                Stage::Where(e) | Stage::Take(e) => hoist_aggregates(e, &mut taken, &mut hoisted),
                Stage::Order(keys) => keys
                    .iter_mut()
                    .for_each(|k| hoist_aggregates(&mut k.expr, &mut taken, &mut hoisted)),
                Stage::Top { key, .. } => hoist_aggregates(&mut key.expr, &mut taken, &mut hoisted),
                Stage::Serialize(items) => items
                    .iter_mut()
                    .for_each(|i| hoist_aggregates(&mut i.expr, &mut taken, &mut hoisted)),
                _ => return None,
            }
            let names: Vec<String> = hoisted
                .iter()
                .filter_map(|h| h.name.as_ref().map(|n| n.name.clone()))
                .collect();
            let mut refs = Vec::new();
            for e in kql::extract::stage_exprs(&rewritten) {
                outer_columns(e, &mut refs);
            }
            later_columns(idx + 1, &mut refs);
            let by = keys_from(refs, &names);
            vec![
                Stage::Summarize {
                    aggregates: hoisted,
                    by,
                },
                rewritten,
            ]
        }
    };
    out.stages.splice(idx..=idx, replacement);
    Some(out)
}

/// Text of `kql` with the first resolvable unknown identifier replaced.
fn fix_identifier(kql: &str, diags: &[Diagnostic], sub: &Substitution) -> Result<Option<String>, EmbedError> {
    for d in diags {
        let is_table = d.code == codes::UNKNOWN_TABLE;
        if !(is_table || d.code == codes::UNKNOWN_COLUMN) {
            continue;
        }
        let Some(bad) = &d.related else { continue };
        let Some(replacement) = sub.substitute(bad, &d.scope, is_table)? else {
            continue;
        };
        let (start, end) = (d.span.start, d.span.end);
        if end > kql.len() || !kql.is_char_boundary(start) || !kql.is_char_boundary(end) {
            continue;
        }
        let mut out = String::with_capacity(kql.len());
        out.push_str(&kql[..start]);
        out.push_str(&render::ident(&replacement));
        out.push_str(&kql[end..]);
        return Ok(Some(out));
    }
    Ok(None)
}

/// Repairs `kql` against `schema`. Identifier substitution needs `sub`;
/// without it that rule never fires.
pub fn repair(kql: &str, schema: &Schema, sub: Option<&Substitution>, options: &RepairOptions) -> RepairOutcome {
    let first = analyze(kql, schema);
    let mut text = kql.to_string();
    let mut diags = first.diagnostics.clone();
    let mut query = first.query;
    let mut applied = Vec::new();
    let mut disabled: Vec<RuleId> = Vec::new();
    let mut iterations = 0;

    while !(query.is_some() && diags.is_empty()) && iterations < options.max_iterations {
        let mut candidate = None;
        for rule in RuleId::ORDER {
            if disabled.contains(&rule) || (rule == RuleId::UndefinedIdentifier && sub.is_none()) {
                continue;
            }
            let next = match rule {
                RuleId::BetweenParens => (has_code(&diags, codes::BETWEEN_MISSING_PARENS))
                    .then(|| query.as_ref().map(render))
                    .flatten(),
                RuleId::MissingExtend => (has_code(&diags, codes::MISSING_EXTEND))
                    .then(|| query.as_ref().and_then(fix_missing_extend).map(|q| render(&q)))
                    .flatten(),
                RuleId::MissingSummarize => (has_code(&diags, codes::AGGREGATE_OUTSIDE_SUMMARIZE))
                    .then(|| query.as_ref().and_then(|q| fix_missing_summarize(q, schema)).map(|q| render(&q)))
                    .flatten(),
                RuleId::UndefinedIdentifier => match fix_identifier(&text, &diags, sub.expect("checked above")) {
                    Ok(t) => t,
                    Err(e) => {
                        log::warn!("identifier substitution disabled: {e}");
                        disabled.push(rule);
                        None
                    }
                },
            };
            match next {
                Some(t) if t != text => {
                    candidate = Some((rule, t));
                    break;
                }
                _ => {}
            }
        }
        let Some((rule, next)) = candidate else { break };
        iterations += 1;
        let analysis = analyze(&next, schema);
        if analysis.diagnostics.len() > diags.len() || analysis.query.is_none() {
            log::debug!("rule {rule} made things worse; rolled back");
            disabled.push(rule);
            continue;
        }
        applied.push(rule);
        text = next;
        diags = analysis.diagnostics;
        query = analysis.query;
    }

    let fixed = query.is_some() && diags.is_empty();
    if fixed {
        RepairOutcome {
            final_kql: text,
            fixed,
            applied_rules: applied,
            remaining: Vec::new(),
            iterations,
            disabled_rules: disabled,
            attempted_kql: None,
        }
    } else {
        RepairOutcome {
            attempted_kql: (text != kql).then_some(text),
            final_kql: kql.to_string(),
            fixed,
            applied_rules: applied,
            remaining: first.diagnostics,
            iterations,
            disabled_rules: disabled,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::DeterministicEmbedder;
    use kql::{ColumnType, TableSchema};

    fn schema() -> Schema {
        let mut s = Schema::new();
        s.add_table(TableSchema::new(
            "DeviceInfo",
            vec![
                ("DeviceId".into(), ColumnType::String),
                ("DeviceName".into(), ColumnType::String),
                ("Value".into(), ColumnType::Long),
                ("Timestamp".into(), ColumnType::DateTime),
            ],
        ));
        s.add_table(TableSchema::new(
            "T",
            vec![("A".into(), ColumnType::Long), ("K".into(), ColumnType::String)],
        ));
        s
    }

    fn run(kql: &str) -> RepairOutcome {
        repair(kql, &schema(), None, &RepairOptions::default())
    }

    #[test]
    fn valid_input_untouched() {
        let o = run("T | where A > 1 // keep comments");
        assert!(o.fixed);
        assert!(o.applied_rules.is_empty());
        assert_eq!(o.final_kql, "T | where A > 1 // keep comments");
        assert_eq!(o.iterations, 0);
    }

    #[test]
    fn between_gets_parentheses() {
        let o = run("DeviceInfo | where Value between 1 .. 5");
        assert!(o.fixed, "{o:?}");
        assert_eq!(o.final_kql, "DeviceInfo\n| where Value between (1 .. 5)");
        assert_eq!(o.applied_rules, [RuleId::BetweenParens]);
    }

    #[test]
    fn extend_is_inserted() {
        let o = run("T | X = A + 1 | project X");
        assert!(o.fixed, "{o:?}");
        assert_eq!(o.final_kql, "T\n| extend X = A + 1\n| project X");
    }

    #[test]
    fn summarize_is_inserted() {
        let o = run("T | where count() > 3");
        assert!(o.fixed, "{o:?}");
        assert_eq!(o.final_kql, "T\n| summarize count_ = count()\n| where count_ > 3");

        let o = run("T | where count() > 3 and K != 'x' | project K");
        assert!(o.fixed, "{o:?}");
        assert_eq!(
            o.final_kql,
            "T\n| summarize count_ = count() by K\n| where count_ > 3 and K != 'x'\n| project K"
                .replace('\'', "\"")
        );

        let o = run("T | project K, total = sum(A)");
        assert_eq!(o.final_kql, "T\n| summarize total = sum(A) by K");
        let o = run("T | extend m = max(A), k2 = strcat(K, 'x')");
        assert!(o.fixed, "{o:?}");
        assert_eq!(o.final_kql, "T\n| summarize m = max(A) by K\n| extend k2 = strcat(K, \"x\")");
    }

    #[test]
    fn combined_rules_apply_in_order() {
        let o = run("T | X = A + 1 | where X between 1 .. 2");
        assert!(o.fixed, "{o:?}");
        assert_eq!(o.applied_rules, [RuleId::BetweenParens, RuleId::MissingExtend]);
    }

    #[test]
    fn unfixable_returns_original() {
        let o = run("T | where Nope > 1");
        assert!(!o.fixed);
        assert_eq!(o.final_kql, "T | where Nope > 1");
        assert_eq!(o.remaining.len(), 1);
    }

    #[test]
    fn identifiers_are_substituted() {
        let store = VectorStore::new("deterministic-v1");
        let sub = Substitution::new(&store, &DeterministicEmbedder, 0.9);
        let o = repair("DeviceInfo | where device_name == 'x'", &schema(), Some(&sub), &RepairOptions::default());
        assert!(o.fixed, "{o:?}");
        assert_eq!(o.final_kql, "DeviceInfo | where DeviceName == 'x'");
        assert_eq!(o.applied_rules, [RuleId::UndefinedIdentifier]);

        let o = repair("Device_Info | take 1", &schema(), Some(&sub), &RepairOptions::default());
        assert_eq!(o.final_kql, "DeviceInfo | take 1");

        let o = repair("DeviceInfo | where Colour > 1", &schema(), Some(&sub), &RepairOptions::default());
        assert!(!o.fixed);
    }

    #[test]
    fn substitution_ties_prefer_smaller_name() {
        let store = VectorStore::new("x");
        let sub = Substitution::new(&store, &DeterministicEmbedder, 0.9);
        let scope = [
            ScopeEntry { name: "device_id".into(), table: None },
            ScopeEntry { name: "Device_Id".into(), table: None },
        ];
        assert_eq!(sub.substitute("DeviceId", &scope, false).unwrap(), Some("Device_Id".into()));
        let far = [ScopeEntry { name: "Timestamp".into(), table: None }];
        assert_eq!(sub.substitute("DeviceId", &far, false).unwrap(), None);
    }

    #[test]
    fn provider_failure_disables_only_substitution() {
        let store = VectorStore::new("x");
        let failing = crate::embed::ScriptedEmbedder::default();
        let sub = Substitution::new(&store, &failing, 0.9);
        let o = repair("T | X = A + 1 | where Y > 1", &schema(), Some(&sub), &RepairOptions::default());
        assert_eq!(o.applied_rules, [RuleId::MissingExtend]);
        assert_eq!(o.disabled_rules, [RuleId::UndefinedIdentifier]);
        assert!(!o.fixed);
    }
}
