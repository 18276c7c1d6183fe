//! Semantic validation against a [`Schema`].

use std::collections::BTreeMap;

use crate::ast::*;
use crate::diagnostic::{codes, Diagnostic, ScopeEntry};
use crate::functions;
use crate::naming::{default_name, output_names, uniquify};
use crate::parser::{parse, Parsed};
use crate::schema::Schema;
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Col {
    name: String,
    table: Option<String>,
}

/// Columns visible at a point in the pipeline. `open` scopes accept any
/// name; they follow errors that make the real column set unknowable.
#[derive(Debug, Clone, Default)]
struct Scope {
    cols: Vec<Col>,
    open: bool,
}

impl Scope {
    fn open() -> Self {
        Scope {
            cols: Vec::new(),
            open: true,
        }
    }

    fn has(&self, name: &str) -> bool {
        self.cols.iter().any(|c| c.name == name)
    }

    fn get(&self, name: &str) -> Option<&Col> {
        self.cols.iter().find(|c| c.name == name)
    }

    fn names(&self) -> Vec<String> {
        self.cols.iter().map(|c| c.name.clone()).collect()
    }

    /// Adds or replaces a column, keeping the original position on replace.
    fn set(&mut self, col: Col) {
        match self.cols.iter_mut().find(|c| c.name == col.name) {
            Some(existing) => *existing = col,
            None => self.cols.push(col),
        }
    }

    fn union(scopes: Vec<Scope>) -> Scope {
        let mut out = Scope::default();
        for s in scopes {
            out.open |= s.open;
            for c in s.cols {
                if !out.has(&c.name) {
                    out.cols.push(c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
struct Env {
    scalars: Vec<String>,
    tabular: BTreeMap<String, Scope>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum AggCtx {
    Forbidden,
    Allowed,
    Inside,
}

/// Parsing plus validation in one step.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub query: Option<Query>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Analysis {
    pub fn is_syntactically_correct(&self) -> bool {
        self.query.is_some() && crate::diagnostic::is_syntactically_correct(&self.diagnostics)
    }

    pub fn is_semantically_correct(&self) -> bool {
        self.query.is_some() && self.diagnostics.is_empty()
    }
}

/// Parses and validates `text`. Semantic checks run even when syntax
/// errors were found, on the best-effort tree.
pub fn analyze(text: &str, schema: &Schema) -> Analysis {
    let Parsed {
        query,
        mut diagnostics,
    } = parse(text);
    if let Some(q) = &query {
        diagnostics.extend(validate(q, schema));
    }
    Analysis { query, diagnostics }
}

/// Semantic diagnostics for `query`.
pub fn validate(query: &Query, schema: &Schema) -> Vec<Diagnostic> {
    let mut v = Validator {
        schema,
        diags: Vec::new(),
    };
    v.query(query, &Env::default());
    v.diags
}

/// Output column names of `query` when they can be determined statically.
pub fn output_columns(query: &Query, schema: &Schema) -> Option<Vec<String>> {
    let mut v = Validator {
        schema,
        diags: Vec::new(),
    };
    let scope = v.query(query, &Env::default());
    (!scope.open).then(|| scope.names())
}

struct Validator<'s> {
    schema: &'s Schema,
    diags: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn query(&mut self, q: &Query, outer: &Env) -> Scope {
        let mut env = outer.clone();
        let mut seen: Vec<&str> = Vec::new();
        for b in &q.lets {
            if seen.contains(&b.name.name.as_str()) {
                self.diags.push(
                    Diagnostic::semantic(
                        codes::DUPLICATE_LET,
                        format!("'{}' is bound more than once", b.name.name),
                        b.name.span,
                    )
                    .with_related(&b.name.name),
                );
            }
            seen.push(&b.name.name);
            match &b.value {
                LetValue::Scalar(Expr::Column(id)) if !env.scalars.contains(&id.name) => {
                    // no row context here, so a bare name aliases a table
                    let scope = self.table(id, &env);
                    env.tabular.insert(b.name.name.clone(), scope);
                }
                LetValue::Scalar(Expr::Subquery(sub)) => {
                    let scope = self.query(sub, &env);
                    env.scalars.retain(|s| s != &b.name.name);
                    env.tabular.insert(b.name.name.clone(), scope);
                }
                LetValue::Scalar(e) => {
                    self.expr(e, &Scope::default(), &env, AggCtx::Forbidden);
                    env.tabular.remove(&b.name.name);
                    env.scalars.push(b.name.name.clone());
                }
                LetValue::Tabular(sub) => {
                    let scope = self.query(sub, &env);
                    env.scalars.retain(|s| s != &b.name.name);
                    env.tabular.insert(b.name.name.clone(), scope);
                }
            }
        }
        let mut scope = self.source(&q.source, &env);
        for stage in &q.stages {
            scope = self.stage(stage, scope, &env);
        }
        scope
    }

    fn source(&mut self, source: &Source, env: &Env) -> Scope {
        match source {
            Source::Table(id) => self.table(id, env),
            Source::Union(items) => {
                let scopes = items.iter().map(|s| self.source(s, env)).collect();
                Scope::union(scopes)
            }
            Source::Subquery(q) => self.query(q, env),
            Source::Range {
                column,
                from,
                to,
                step,
            } => {
                let empty = Scope::default();
                for e in [from, to, step] {
                    self.expr(e, &empty, env, AggCtx::Forbidden);
                }
                Scope {
                    cols: vec![Col {
                        name: column.name.clone(),
                        table: None,
                    }],
                    open: false,
                }
            }
        }
    }

    fn table(&mut self, id: &Ident, env: &Env) -> Scope {
        if id.name.is_empty() {
            return Scope::open();
        }
        if let Some(scope) = env.tabular.get(&id.name) {
            return scope.clone();
        }
        let cols_of = |name: &str| -> Vec<Col> {
            self.schema
                .table(name)
                .map(|t| {
                    t.columns
                        .iter()
                        .map(|(c, _)| Col {
                            name: c.clone(),
                            table: Some(name.to_string()),
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        match self.schema.table(&id.name) {
            Some(_) if self.schema.is_accessible(&id.name) => Scope {
                cols: cols_of(&id.name),
                open: false,
            },
            Some(_) => {
                self.diags.push(
                    Diagnostic::semantic(
                        codes::TABLE_NOT_ACCESSIBLE,
                        format!("table '{}' is not accessible", id.name),
                        id.span,
                    )
                    .with_related(&id.name),
                );
                Scope {
                    cols: cols_of(&id.name),
                    open: false,
                }
            }
            None => {
                let mut scope: Vec<ScopeEntry> = self
                    .schema
                    .accessible_tables()
                    .map(|t| ScopeEntry {
                        name: t.name.clone(),
                        table: None,
                    })
                    .collect();
                scope.extend(env.tabular.keys().map(|k| ScopeEntry {
                    name: k.clone(),
                    table: None,
                }));
                self.diags.push(
                    Diagnostic::semantic(
                        codes::UNKNOWN_TABLE,
                        format!("unknown table '{}'", id.name),
                        id.span,
                    )
                    .with_related(&id.name)
                    .with_scope(scope),
                );
                Scope::open()
            }
        }
    }

    fn unknown_column(&mut self, name: &str, span: Span, scope: &Scope, env: &Env) {
        let mut entries: Vec<ScopeEntry> = scope
            .cols
            .iter()
            .map(|c| ScopeEntry {
                name: c.name.clone(),
                table: c.table.clone(),
            })
            .collect();
        entries.extend(env.scalars.iter().map(|s| ScopeEntry {
            name: s.clone(),
            table: None,
        }));
        self.diags.push(
            Diagnostic::semantic(
                codes::UNKNOWN_COLUMN,
                format!("unknown column or name '{name}'"),
                span,
            )
            .with_related(name)
            .with_scope(entries),
        );
    }

    fn column_ref(&mut self, name: &str, span: Span, scope: &Scope, env: &Env) {
        if name.is_empty() || scope.open || scope.has(name) || env.scalars.iter().any(|s| s == name) {
            return;
        }
        self.unknown_column(name, span, scope, env);
    }

    fn ident_ref(&mut self, id: &Ident, scope: &Scope, env: &Env) {
        self.column_ref(&id.name, id.span, scope, env);
    }

    fn expr(&mut self, e: &Expr, scope: &Scope, env: &Env, ctx: AggCtx) {
        match e {
            Expr::Column(id) => self.ident_ref(id, scope, env),
            Expr::Literal(_) | Expr::Star => {}
            Expr::Subquery(q) => {
                self.query(q, env);
            }
            Expr::Call { name, args } => {
                let f = name.name.as_str();
                let mut inner = ctx;
                if functions::is_aggregate(f) {
                    match ctx {
                        AggCtx::Forbidden => self.diags.push(
                            Diagnostic::semantic(
                                codes::AGGREGATE_OUTSIDE_SUMMARIZE,
                                format!("aggregation '{f}' is only allowed in summarize"),
                                name.span,
                            )
                            .with_related(f),
                        ),
                        AggCtx::Inside => self.diags.push(
                            Diagnostic::semantic(
                                codes::NESTED_AGGREGATE,
                                format!("aggregation '{f}' cannot be nested in another aggregation"),
                                name.span,
                            )
                            .with_related(f),
                        ),
                        AggCtx::Allowed => {}
                    }
                    inner = AggCtx::Inside;
                } else if !functions::is_scalar(f) {
                    self.diags.push(
                        Diagnostic::semantic(
                            codes::UNKNOWN_FUNCTION,
                            format!("unknown function '{f}'"),
                            name.span,
                        )
                        .with_related(f),
                    );
                }
                for a in args {
                    self.expr(a, scope, env, inner);
                }
            }
            Expr::Case { branches, default } => {
                for (c, v) in branches {
                    self.expr(c, scope, env, ctx);
                    self.expr(v, scope, env, ctx);
                }
                self.expr(default, scope, env, ctx);
            }
            Expr::Unary { operand, .. } => self.expr(operand, scope, env, ctx),
            Expr::Binary { left, right, .. } => {
                self.expr(left, scope, env, ctx);
                self.expr(right, scope, env, ctx);
            }
            Expr::InList { left, items, .. } => {
                self.expr(left, scope, env, ctx);
                for i in items {
                    self.expr(i, scope, env, ctx);
                }
            }
            Expr::Between {
                expr, low, high, ..
            } => {
                self.expr(expr, scope, env, ctx);
                self.expr(low, scope, env, ctx);
                self.expr(high, scope, env, ctx);
            }
            Expr::Property { base, key } => {
                self.expr(base, scope, env, ctx);
                if let PropertyKey::Index(i) = key {
                    self.expr(i, scope, env, ctx);
                }
            }
        }
    }

    fn origin(scope: &Scope, e: &Expr) -> Option<String> {
        match e {
            Expr::Column(id) => scope.get(&id.name).and_then(|c| c.table.clone()),
            _ => None,
        }
    }

    fn extend_items(&mut self, items: &[NamedExpr], mut scope: Scope, env: &Env) -> Scope {
        let names = output_names(items);
        for (item, name) in items.iter().zip(names) {
            self.expr(&item.expr, &scope, env, AggCtx::Forbidden);
            let table = Self::origin(&scope, &item.expr);
            scope.set(Col { name, table });
        }
        scope
    }

    fn stage(&mut self, stage: &Stage, scope: Scope, env: &Env) -> Scope {
        match stage {
            Stage::Where(e) => {
                self.expr(e, &scope, env, AggCtx::Forbidden);
                scope
            }
            Stage::Project(items) => {
                let names = output_names(items);
                let mut out = Scope {
                    cols: Vec::new(),
                    open: scope.open,
                };
                for (item, name) in items.iter().zip(names) {
                    self.expr(&item.expr, &scope, env, AggCtx::Forbidden);
                    out.set(Col {
                        name,
                        table: Self::origin(&scope, &item.expr),
                    });
                }
                out
            }
            Stage::ProjectAway(names) => {
                let mut out = scope.clone();
                for id in names {
                    self.ident_ref(id, &scope, env);
                    out.cols.retain(|c| c.name != id.name);
                }
                out
            }
            Stage::ProjectRename(pairs) => {
                let mut out = scope.clone();
                for (new, old) in pairs {
                    self.ident_ref(old, &scope, env);
                    if let Some(c) = out.cols.iter_mut().find(|c| c.name == old.name) {
                        c.name = new.name.clone();
                    } else if out.open {
                        out.cols.push(Col {
                            name: new.name.clone(),
                            table: None,
                        });
                    }
                }
                out
            }
            Stage::Extend(items) | Stage::Serialize(items) => self.extend_items(items, scope, env),
            Stage::Assignment(items) => self.extend_items(items, scope, env),
            Stage::Summarize { aggregates, by } => {
                let mut out = Scope {
                    cols: Vec::new(),
                    open: scope.open,
                };
                for (item, name) in by.iter().zip(output_names(by)) {
                    self.expr(&item.expr, &scope, env, AggCtx::Forbidden);
                    out.set(Col {
                        name,
                        table: Self::origin(&scope, &item.expr),
                    });
                }
                let names = output_names(aggregates);
                for (item, name) in aggregates.iter().zip(names) {
                    self.expr(&item.expr, &scope, env, AggCtx::Allowed);
                    let name = uniquify(&name, &out.names());
                    out.cols.push(Col { name, table: None });
                    for col in arg_extra_columns(&item.expr, &scope) {
                        if !out.has(&col.name) {
                            out.cols.push(col);
                        }
                    }
                }
                out
            }
            Stage::Order(keys) => {
                for k in keys {
                    self.expr(&k.expr, &scope, env, AggCtx::Forbidden);
                }
                scope
            }
            Stage::Take(e) => {
                self.expr(e, &Scope::default(), env, AggCtx::Forbidden);
                scope
            }
            Stage::Top { count, key } => {
                self.expr(count, &Scope::default(), env, AggCtx::Forbidden);
                self.expr(&key.expr, &scope, env, AggCtx::Forbidden);
                scope
            }
            Stage::Distinct(cols) => {
                if cols.is_empty() {
                    return scope;
                }
                let items: Vec<NamedExpr> = cols.iter().cloned().map(NamedExpr::unnamed).collect();
                let mut out = Scope {
                    cols: Vec::new(),
                    open: scope.open,
                };
                for (e, name) in cols.iter().zip(output_names(&items)) {
                    self.expr(e, &scope, env, AggCtx::Forbidden);
                    out.set(Col {
                        name,
                        table: Self::origin(&scope, e),
                    });
                }
                out
            }
            Stage::Count => Scope {
                cols: vec![Col {
                    name: "Count".into(),
                    table: None,
                }],
                open: false,
            },
            Stage::Join { kind, right, on } => {
                let right_scope = self.query(right, env);
                for cond in on {
                    self.join_condition(cond, &scope, &right_scope, env);
                }
                join_scope(*kind, scope, right_scope)
            }
            Stage::Union(items) => {
                let mut scopes = vec![scope];
                scopes.extend(items.iter().map(|s| self.source(s, env)));
                Scope::union(scopes)
            }
            Stage::MvExpand { items, limit, .. } => {
                if let Some(l) = limit {
                    self.expr(l, &Scope::default(), env, AggCtx::Forbidden);
                }
                self.mv_items(items, scope, env)
            }
            Stage::MvApply { items, stages } => {
                let expanded = self.mv_items(items, scope.clone(), env);
                let mut inner = expanded;
                for s in stages {
                    inner = self.stage(s, inner, env);
                }
                let mut out = scope;
                for item in items {
                    if let Some(name) = mv_item_name(item) {
                        out.cols.retain(|c| c.name != name);
                    }
                }
                out.open |= inner.open;
                for c in inner.cols {
                    out.set(c);
                }
                out
            }
            Stage::Render { .. } => scope,
            Stage::Invalid(_) => Scope::open(),
        }
    }

    fn mv_items(&mut self, items: &[MvExpandItem], mut scope: Scope, env: &Env) -> Scope {
        let base = scope.clone();
        for item in items {
            self.expr(&item.expr, &base, env, AggCtx::Forbidden);
            let name = mv_item_name(item).unwrap_or_else(|| "Column1".to_string());
            let table = Self::origin(&base, &item.expr);
            scope.set(Col { name, table });
        }
        scope
    }

    fn join_condition(&mut self, cond: &Expr, left: &Scope, right: &Scope, env: &Env) {
        match cond {
            Expr::Binary {
                op: BinaryOp::And,
                left: l,
                right: r,
            } => {
                self.join_condition(l, left, right, env);
                self.join_condition(r, left, right, env);
            }
            Expr::Column(id) => {
                self.ident_ref(id, left, env);
                self.ident_ref(id, right, env);
            }
            Expr::Binary {
                op: BinaryOp::Eq,
                left: l,
                right: r,
            } => {
                let sides = [(l.as_ref(), Side::Left), (r.as_ref(), Side::Right)];
                let mut ok = true;
                for (e, default_side) in sides {
                    match join_operand(e) {
                        Some((side, name, span)) => {
                            let side = side.unwrap_or(default_side);
                            let scope = if side == Side::Left { left } else { right };
                            self.column_ref(name, span, scope, &Env::default());
                        }
                        None => ok = false,
                    }
                }
                if !ok {
                    self.non_equality(cond);
                }
            }
            _ => self.non_equality(cond),
        }
    }

    fn non_equality(&mut self, cond: &Expr) {
        let span = first_span(cond).unwrap_or_default();
        self.diags.push(Diagnostic::semantic(
            codes::JOIN_NON_EQUALITY,
            "join conditions may only compare columns with '=='",
            span,
        ));
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

fn key_of(e: &Expr) -> Option<&PropertyKey> {
    match e {
        Expr::Property { key, .. } => Some(key),
        _ => None,
    }
}

/// `$left.X`, `$right.X` or a bare column `X`, as (side, name, span).
fn join_operand(e: &Expr) -> Option<(Option<Side>, &str, Span)> {
    match e {
        Expr::Column(id) if !id.name.starts_with('$') => Some((None, id.name.as_str(), id.span)),
        Expr::Property {
            base,
            key: PropertyKey::Name(_),
        } => {
            let Expr::Column(b) = base.as_ref() else {
                return None;
            };
            let side = match b.name.as_str() {
                "$left" => Side::Left,
                "$right" => Side::Right,
                _ => return None,
            };
            let PropertyKey::Name(n) = key_of(e)? else {
                return None;
            };
            Some((Some(side), n.as_str(), b.span))
        }
        _ => None,
    }
}

fn first_span(e: &Expr) -> Option<Span> {
    let mut found = None;
    e.walk(&mut |x| {
        if found.is_none() {
            match x {
                Expr::Column(id) => found = Some(id.span),
                Expr::Call { name, .. } => found = Some(name.span),
                _ => {}
            }
        }
    });
    found
}

fn mv_item_name(item: &MvExpandItem) -> Option<String> {
    match &item.name {
        Some(n) => Some(n.name.clone()),
        None => default_name(&item.expr),
    }
}

/// Extra output columns of `arg_max`/`arg_min` (`*` meaning every column).
fn arg_extra_columns(e: &Expr, scope: &Scope) -> Vec<Col> {
    let mut cols = Vec::new();
    if let Expr::Call { name: f, args } = e {
        if matches!(f.name.as_str(), "arg_max" | "arg_min") {
            for a in args.iter().skip(1) {
                match a {
                    Expr::Star => cols.extend(scope.cols.iter().cloned()),
                    other => {
                        if let Some(n) = default_name(other) {
                            cols.push(Col {
                                table: Validator::origin(scope, other),
                                name: n,
                            });
                        }
                    }
                }
            }
        }
    }
    cols
}

fn join_scope(kind: JoinKind, left: Scope, right: Scope) -> Scope {
    if kind.keeps_left_only() {
        return left;
    }
    if kind.keeps_right_only() {
        return right;
    }
    let mut out = left;
    out.open |= right.open;
    for c in right.cols {
        let taken = out.names();
        let name = uniquify(&c.name, &taken);
        out.cols.push(Col {
            name,
            table: c.table,
        });
    }
    out
}
