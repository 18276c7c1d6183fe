//! Set extractors used by the offline metrics: referenced tables, filter
//! columns and filter literals.

use std::collections::BTreeSet;

use crate::ast::*;

/// Physical tables reachable from `query`. Names bound by `let` are not
/// tables and are skipped; the tables inside their definitions count.
pub fn extract_tables(query: &Query) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    tables_in_query(query, &BTreeSet::new(), &mut out);
    out
}

fn tables_in_query(q: &Query, outer_lets: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    let mut lets = outer_lets.clone();
    for b in &q.lets {
        match &b.value {
            LetValue::Tabular(sub) => tables_in_query(sub, &lets, out),
            LetValue::Scalar(e) => tables_in_expr(e, &lets, out, true),
        }
        lets.insert(b.name.name.clone());
    }
    tables_in_source(&q.source, &lets, out);
    for s in &q.stages {
        tables_in_stage(s, &lets, out);
    }
}

fn tables_in_source(s: &Source, lets: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    match s {
        Source::Table(id) => {
            if !id.name.is_empty() && !lets.contains(&id.name) {
                out.insert(id.name.clone());
            }
        }
        Source::Union(items) => items.iter().for_each(|i| tables_in_source(i, lets, out)),
        Source::Subquery(q) => tables_in_query(q, lets, out),
        Source::Range { from, to, step, .. } => {
            for e in [from, to, step] {
                tables_in_expr(e, lets, out, false);
            }
        }
    }
}

fn tables_in_stage(s: &Stage, lets: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    match s {
        Stage::Join { right, .. } => tables_in_query(right, lets, out),
        Stage::Union(items) => items.iter().for_each(|i| tables_in_source(i, lets, out)),
        Stage::MvApply { stages, .. } => stages.iter().for_each(|st| tables_in_stage(st, lets, out)),
        _ => {}
    }
    for e in stage_exprs(s) {
        tables_in_expr(e, lets, out, false);
    }
}

/// `let_rhs` marks the right-hand side of a scalar `let`. There is no row
/// context there, so a bare name is either another let or a table alias
/// (`let t = T;`).
fn tables_in_expr(e: &Expr, lets: &BTreeSet<String>, out: &mut BTreeSet<String>, let_rhs: bool) {
    if let_rhs {
        if let Expr::Column(id) = e {
            if !id.name.is_empty() && !lets.contains(&id.name) {
                out.insert(id.name.clone());
            }
            return;
        }
    }
    e.walk(&mut |x| {
        if let Expr::Subquery(q) = x {
            tables_in_query(q, lets, out);
        }
    });
}

/// Every expression directly owned by a stage (not nested queries).
pub fn stage_exprs(s: &Stage) -> Vec<&Expr> {
    match s {
        Stage::Where(e) | Stage::Take(e) => vec![e],
        Stage::Project(items) | Stage::Extend(items) | Stage::Serialize(items) | Stage::Assignment(items) => {
            items.iter().map(|i| &i.expr).collect()
        }
        Stage::Summarize { aggregates, by } => {
            aggregates.iter().chain(by.iter()).map(|i| &i.expr).collect()
        }
        Stage::Order(keys) => keys.iter().map(|k| &k.expr).collect(),
        Stage::Top { count, key } => vec![count, &key.expr],
        Stage::Distinct(cols) => cols.iter().collect(),
        Stage::Join { on, .. } => on.iter().collect(),
        Stage::MvExpand { items, limit, .. } => {
            let mut v: Vec<&Expr> = items.iter().map(|i| &i.expr).collect();
            v.extend(limit.iter());
            v
        }
        Stage::MvApply { items, .. } => items.iter().map(|i| &i.expr).collect(),
        Stage::Render { properties, .. } => properties.iter().map(|(_, v)| v).collect(),
        Stage::ProjectAway(_)
        | Stage::ProjectRename(_)
        | Stage::Count
        | Stage::Union(_)
        | Stage::Invalid(_) => Vec::new(),
    }
}

/// Calls `f` with every `where` predicate anywhere in the query, along
/// with the scalar let names visible there.
fn for_each_where<'a>(q: &'a Query, lets: &BTreeSet<String>, f: &mut dyn FnMut(&'a Expr, &BTreeSet<String>)) {
    let mut lets = lets.clone();
    for b in &q.lets {
        match &b.value {
            LetValue::Tabular(sub) => for_each_where(sub, &lets, f),
            LetValue::Scalar(e) => where_in_expr(e, &lets, f),
        }
        lets.insert(b.name.name.clone());
    }
    where_in_source(&q.source, &lets, f);
    where_in_stages(&q.stages, &lets, f);
}

fn where_in_stages<'a>(
    stages: &'a [Stage],
    lets: &BTreeSet<String>,
    f: &mut dyn FnMut(&'a Expr, &BTreeSet<String>),
) {
    for s in stages {
        match s {
            Stage::Where(e) => f(e, lets),
            Stage::Join { right, .. } => for_each_where(right, lets, f),
            Stage::Union(items) => items.iter().for_each(|i| where_in_source(i, lets, f)),
            Stage::MvApply { stages, .. } => where_in_stages(stages, lets, f),
            _ => {}
        }
        for e in stage_exprs(s) {
            where_in_expr(e, lets, f);
        }
    }
}

fn where_in_source<'a>(
    s: &'a Source,
    lets: &BTreeSet<String>,
    f: &mut dyn FnMut(&'a Expr, &BTreeSet<String>),
) {
    match s {
        Source::Union(items) => items.iter().for_each(|i| where_in_source(i, lets, f)),
        Source::Subquery(q) => for_each_where(q, lets, f),
        Source::Table(_) | Source::Range { .. } => {}
    }
}

fn where_in_expr<'a>(
    e: &'a Expr,
    lets: &BTreeSet<String>,
    f: &mut dyn FnMut(&'a Expr, &BTreeSet<String>),
) {
    e.walk(&mut |x| {
        if let Expr::Subquery(q) = x {
            for_each_where(q, lets, f);
        }
    });
}

/// Column names referenced inside `where` predicates. `$left`/`$right`
/// prefixes are dropped and let-bound names are excluded.
pub fn extract_filter_columns(query: &Query) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for_each_where(query, &BTreeSet::new(), &mut |pred, lets| {
        pred.walk(&mut |x| match x {
            Expr::Column(id) => {
                let n = &id.name;
                if !n.is_empty() && n != "$left" && n != "$right" && !lets.contains(n) {
                    out.insert(n.clone());
                }
            }
            Expr::Property {
                base,
                key: PropertyKey::Name(k),
            } => {
                if let Expr::Column(b) = base.as_ref() {
                    if b.name == "$left" || b.name == "$right" {
                        out.insert(k.clone());
                    }
                }
            }
            _ => {}
        });
    });
    out
}

/// Literals inside `where` predicates, normalized by [`normalize_literal`].
pub fn extract_filter_literals(query: &Query) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for_each_where(query, &BTreeSet::new(), &mut |pred, _| {
        pred.walk(&mut |x| {
            if let Expr::Literal(l) = x {
                out.insert(normalize_literal(l));
            }
        });
    });
    out
}

/// Strings lose their quotes; numbers are printed canonically (`1.50`
/// becomes `1.5`, `2.0` becomes `2`); other literals keep their text.
pub fn normalize_literal(l: &Literal) -> String {
    match l {
        Literal::String(s) => s.clone(),
        Literal::Long(v) => v.to_string(),
        Literal::Real(v) => canonical_real(*v),
        Literal::Bool(b) => b.to_string(),
        Literal::DateTime(t) | Literal::Timespan(t) | Literal::Dynamic(t) => t.clone(),
    }
}

pub fn canonical_real(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
