//! Deterministic in-memory evaluator.
//!
//! Results are a pure function of the query and the database: grouping
//! keeps first-appearance order, sorting is stable, and `now()` is fixed
//! by [`ExecOptions`].

mod aggregate;
mod eval;
mod functions;
pub mod table;
pub mod value;

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use serde_json::Value as Json;

use crate::ast::*;
use crate::naming::{default_name, output_names, uniquify};
use crate::parser::parse;

pub use table::{load_database, load_database_dir, parse_table, DataTable, Database, LoadError};
pub use value::Value;

/// Separator between `name=value` pairs in a row signature.
pub const SIGNATURE_SEPARATOR: char = '\u{1F}';

#[derive(Debug, Clone)]
pub struct ExecOptions {
    /// Value of `now()` in UTC microseconds.
    pub now: i64,
    /// Upper bound on rows in any intermediate result.
    pub max_rows: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            now: value::parse_datetime("2024-06-01T00:00:00Z").expect("valid constant"),
            max_rows: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("type error: {0}")]
    Type(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown table '{0}'")]
    UnknownTable(String),
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("query does not parse: {0}")]
    Syntax(String),
    #[error("intermediate result exceeds {0} rows")]
    TooManyRows(usize),
}

pub type ExecResult<T> = Result<T, ExecError>;

/// Columns (`C_r`) and rows of an executed query.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn column_set(&self) -> BTreeSet<String> {
        result_columns(self)
    }

    pub fn row_signatures(&self) -> BTreeSet<String> {
        row_signatures(self)
    }
}

pub fn result_columns(result: &ResultTable) -> BTreeSet<String> {
    result.columns.iter().cloned().collect()
}

/// Each row as `name=value` pairs sorted by column name and joined with
/// [`SIGNATURE_SEPARATOR`]; duplicate rows collapse.
pub fn row_signatures(result: &ResultTable) -> BTreeSet<String> {
    let mut order: Vec<usize> = (0..result.columns.len()).collect();
    order.sort_by(|a, b| result.columns[*a].cmp(&result.columns[*b]));
    result
        .rows
        .iter()
        .map(|row| {
            let mut sig = String::new();
            for (n, &i) in order.iter().enumerate() {
                if n > 0 {
                    sig.push(SIGNATURE_SEPARATOR);
                }
                sig.push_str(&result.columns[i]);
                sig.push('=');
                sig.push_str(&row[i].canonical());
            }
            sig
        })
        .collect()
}

pub fn execute(query: &Query, db: &Database) -> ExecResult<ResultTable> {
    execute_with(query, db, &ExecOptions::default())
}

pub fn execute_with(query: &Query, db: &Database, opts: &ExecOptions) -> ExecResult<ResultTable> {
    let exec = Exec {
        db,
        opts,
        regexes: RefCell::new(HashMap::new()),
        scalar_cache: RefCell::new(HashMap::new()),
    };
    let frame = exec.run_query(query, &Env::default())?;
    Ok(ResultTable {
        columns: frame.columns,
        rows: frame.rows,
    })
}

/// Parses and executes `text`; any syntax diagnostic is an error.
pub fn execute_text(text: &str, db: &Database) -> ExecResult<ResultTable> {
    let parsed = parse(text);
    if let Some(d) = parsed.diagnostics.iter().find(|d| d.is_syntax()) {
        return Err(ExecError::Syntax(d.to_string()));
    }
    let query = parsed
        .query
        .ok_or_else(|| ExecError::Syntax("empty query".into()))?;
    execute(&query, db)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Frame {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub serialized: bool,
}

impl Frame {
    fn index(&self) -> HashMap<String, usize> {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Adds or replaces a column (replacement keeps the position).
    fn set_column(&mut self, name: &str, values: Vec<Value>) {
        match self.position(name) {
            Some(i) => {
                for (row, v) in self.rows.iter_mut().zip(values) {
                    row[i] = v;
                }
            }
            None => {
                self.columns.push(name.to_string());
                for (row, v) in self.rows.iter_mut().zip(values) {
                    row.push(v);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Env {
    pub scalars: BTreeMap<String, Value>,
    pub tables: BTreeMap<String, Rc<Frame>>,
}

/// Evaluation context for one row.
pub(crate) struct RowCtx<'r> {
    pub cols: &'r HashMap<String, usize>,
    pub columns: &'r [String],
    pub row: &'r [Value],
    pub number: usize,
    pub serialized: bool,
    /// Rows of the current group while evaluating summarize aggregates.
    pub group: Option<&'r [&'r [Value]]>,
}

pub(crate) struct Exec<'a> {
    pub db: &'a Database,
    pub opts: &'a ExecOptions,
    pub regexes: RefCell<HashMap<String, regex::Regex>>,
    pub scalar_cache: RefCell<HashMap<*const Query, Value>>,
}

fn empty_index() -> &'static HashMap<String, usize> {
    static EMPTY: std::sync::OnceLock<HashMap<String, usize>> = std::sync::OnceLock::new();
    EMPTY.get_or_init(HashMap::new)
}

impl<'a> Exec<'a> {
    pub(crate) fn empty_ctx(&self) -> RowCtx<'static> {
        RowCtx {
            cols: empty_index(),
            columns: &[],
            row: &[],
            number: 0,
            serialized: false,
            group: None,
        }
    }

    fn check_rows(&self, n: usize) -> ExecResult<()> {
        if n > self.opts.max_rows {
            Err(ExecError::TooManyRows(self.opts.max_rows))
        } else {
            Ok(())
        }
    }

    pub(crate) fn run_query(&self, q: &Query, outer: &Env) -> ExecResult<Frame> {
        let mut env = outer.clone();
        for b in &q.lets {
            let name = b.name.name.clone();
            match &b.value {
                LetValue::Scalar(Expr::Column(id)) if !env.scalars.contains_key(&id.name) => {
                    let frame = self.table_frame(&id.name, &env)?;
                    env.tables.insert(name, Rc::new(frame));
                }
                LetValue::Scalar(Expr::Subquery(sub)) => {
                    let frame = self.run_query(sub, &env)?;
                    env.scalars.remove(&name);
                    env.tables.insert(name, Rc::new(frame));
                }
                LetValue::Tabular(sub) => {
                    let frame = self.run_query(sub, &env)?;
                    env.scalars.remove(&name);
                    env.tables.insert(name, Rc::new(frame));
                }
                LetValue::Scalar(e) => {
                    let v = self.eval(e, &self.empty_ctx(), &env)?;
                    env.tables.remove(&name);
                    env.scalars.insert(name, v);
                }
            }
        }
        let mut frame = self.source(&q.source, &env)?;
        for s in &q.stages {
            frame = self.stage(s, frame, &env)?;
            self.check_rows(frame.rows.len())?;
        }
        Ok(frame)
    }

    fn table_frame(&self, name: &str, env: &Env) -> ExecResult<Frame> {
        if let Some(f) = env.tables.get(name) {
            return Ok((**f).clone());
        }
        let t = self
            .db
            .table(name)
            .ok_or_else(|| ExecError::UnknownTable(name.to_string()))?;
        Ok(Frame {
            columns: t.columns.iter().map(|(c, _)| c.clone()).collect(),
            rows: t.rows.clone(),
            serialized: false,
        })
    }

    fn source(&self, s: &Source, env: &Env) -> ExecResult<Frame> {
        match s {
            Source::Table(id) => self.table_frame(&id.name, env),
            Source::Union(items) => {
                let frames = items
                    .iter()
                    .map(|i| self.source(i, env))
                    .collect::<ExecResult<Vec<_>>>()?;
                Ok(union_frames(frames))
            }
            Source::Subquery(q) => self.run_query(q, env),
            Source::Range {
                column,
                from,
                to,
                step,
            } => {
                let ctx = self.empty_ctx();
                let from = self.eval(from, &ctx, env)?;
                let to = self.eval(to, &ctx, env)?;
                let step = self.eval(step, &ctx, env)?;
                let values = self.range_values(&from, &to, &step)?;
                Ok(Frame {
                    columns: vec![column.name.clone()],
                    rows: values.into_iter().map(|v| vec![v]).collect(),
                    serialized: true,
                })
            }
        }
    }

    /// Arithmetic sequence from `from` to `to` inclusive.
    pub(crate) fn range_values(&self, from: &Value, to: &Value, step: &Value) -> ExecResult<Vec<Value>> {
        let limit = self.opts.max_rows;
        let mut out = Vec::new();
        match (from.scalar(), to.scalar(), step.scalar()) {
            (Value::Long(a), Value::Long(b), Value::Long(s)) => {
                if s == 0 {
                    return Err(ExecError::InvalidArgument("range step must not be 0".into()));
                }
                let mut x = a;
                while (s > 0 && x <= b) || (s < 0 && x >= b) {
                    out.push(Value::Long(x));
                    if out.len() > limit {
                        return Err(ExecError::TooManyRows(limit));
                    }
                    x = match x.checked_add(s) {
                        Some(n) => n,
                        None => break,
                    };
                }
            }
            (Value::DateTime(a), Value::DateTime(b), Value::Timespan(s)) => {
                if s == 0 {
                    return Err(ExecError::InvalidArgument("range step must not be 0".into()));
                }
                let mut x = a;
                while (s > 0 && x <= b) || (s < 0 && x >= b) {
                    out.push(Value::DateTime(x));
                    if out.len() > limit {
                        return Err(ExecError::TooManyRows(limit));
                    }
                    x += s;
                }
            }
            (a, b, s) => {
                let (Some(a), Some(b), Some(s)) = (a.as_f64(), b.as_f64(), s.as_f64()) else {
                    return Err(ExecError::Type(format!(
                        "range needs numeric or datetime/timespan bounds, got {}, {}, {}",
                        a.type_name(),
                        b.type_name(),
                        s.type_name()
                    )));
                };
                if s == 0.0 || !s.is_finite() {
                    return Err(ExecError::InvalidArgument("range step must be non-zero".into()));
                }
                let mut i = 0.0;
                loop {
                    let x = a + i * s;
                    if (s > 0.0 && x > b) || (s < 0.0 && x < b) {
                        break;
                    }
                    out.push(Value::Real(x));
                    if out.len() > limit {
                        return Err(ExecError::TooManyRows(limit));
                    }
                    i += 1.0;
                }
            }
        }
        Ok(out)
    }

    /// Evaluates `e` for every row of `frame`.
    fn column_values(&self, e: &Expr, frame: &Frame, env: &Env) -> ExecResult<Vec<Value>> {
        let idx = frame.index();
        frame
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let ctx = RowCtx {
                    cols: &idx,
                    columns: &frame.columns,
                    row,
                    number: i,
                    serialized: frame.serialized,
                    group: None,
                };
                self.eval(e, &ctx, env)
            })
            .collect()
    }

    fn stage(&self, s: &Stage, mut frame: Frame, env: &Env) -> ExecResult<Frame> {
        match s {
            Stage::Where(pred) => {
                let keep = self.column_values(pred, &frame, env)?;
                let mut rows = Vec::with_capacity(frame.rows.len());
                for (row, k) in frame.rows.into_iter().zip(keep) {
                    match k.scalar() {
                        Value::Bool(true) => rows.push(row),
                        Value::Bool(false) | Value::Null => {}
                        other => {
                            return Err(ExecError::Type(format!(
                                "where predicate is {}, not bool",
                                other.type_name()
                            )))
                        }
                    }
                }
                frame.rows = rows;
                Ok(frame)
            }
            Stage::Project(items) => {
                let names = output_names(items);
                let mut out = Frame {
                    columns: Vec::new(),
                    rows: vec![Vec::new(); frame.rows.len()],
                    serialized: frame.serialized,
                };
                for (item, name) in items.iter().zip(names) {
                    let values = self.column_values(&item.expr, &frame, env)?;
                    out.set_column(&name, values);
                }
                Ok(out)
            }
            Stage::ProjectAway(names) => {
                for id in names {
                    let i = frame
                        .position(&id.name)
                        .ok_or_else(|| ExecError::UnknownColumn(id.name.clone()))?;
                    frame.columns.remove(i);
                    for row in &mut frame.rows {
                        row.remove(i);
                    }
                }
                Ok(frame)
            }
            Stage::ProjectRename(pairs) => {
                for (new, old) in pairs {
                    let i = frame
                        .position(&old.name)
                        .ok_or_else(|| ExecError::UnknownColumn(old.name.clone()))?;
                    frame.columns[i] = new.name.clone();
                }
                Ok(frame)
            }
            Stage::Extend(items) => self.extend(items, frame, env),
            Stage::Serialize(items) => {
                frame.serialized = true;
                self.extend(items, frame, env)
            }
            Stage::Summarize { aggregates, by } => self.summarize(aggregates, by, frame, env),
            Stage::Order(keys) => {
                self.sort(keys, &mut frame, env)?;
                frame.serialized = true;
                Ok(frame)
            }
            Stage::Take(n) => {
                let n = self.count_arg(n, env)?;
                frame.rows.truncate(n);
                Ok(frame)
            }
            Stage::Top { count, key } => {
                let n = self.count_arg(count, env)?;
                self.sort(std::slice::from_ref(key), &mut frame, env)?;
                frame.rows.truncate(n);
                frame.serialized = true;
                Ok(frame)
            }
            Stage::Distinct(cols) => {
                let mut out = if cols.is_empty() {
                    Frame {
                        columns: frame.columns.clone(),
                        rows: frame.rows.clone(),
                        serialized: false,
                    }
                } else {
                    let items: Vec<NamedExpr> = cols.iter().cloned().map(NamedExpr::unnamed).collect();
                    let mut out = Frame {
                        columns: Vec::new(),
                        rows: vec![Vec::new(); frame.rows.len()],
                        serialized: false,
                    };
                    for (e, name) in cols.iter().zip(output_names(&items)) {
                        let values = self.column_values(e, &frame, env)?;
                        out.set_column(&name, values);
                    }
                    out
                };
                let mut seen = BTreeSet::new();
                out.rows.retain(|row| seen.insert(row_key(row)));
                Ok(out)
            }
            Stage::Count => Ok(Frame {
                columns: vec!["Count".into()],
                rows: vec![vec![Value::Long(frame.rows.len() as i64)]],
                serialized: false,
            }),
            Stage::Join { kind, right, on } => {
                let right = self.run_query(right, env)?;
                self.join(*kind, frame, right, on)
            }
            Stage::Union(items) => {
                let mut frames = vec![frame];
                for i in items {
                    frames.push(self.source(i, env)?);
                }
                Ok(union_frames(frames))
            }
            Stage::MvExpand {
                bag_expansion,
                items,
                limit,
            } => {
                let limit = match limit {
                    Some(l) => Some(self.count_arg(l, env)?),
                    None => None,
                };
                let as_array = bag_expansion.as_deref() == Some("array");
                self.mv_expand(items, frame, env, as_array, limit)
            }
            Stage::MvApply { items, stages } => self.mv_apply(items, stages, frame, env),
            Stage::Render { .. } => Ok(frame),
            Stage::Assignment(_) => Err(ExecError::Syntax(
                "column assignment without extend".into(),
            )),
            Stage::Invalid(text) => Err(ExecError::Syntax(format!("invalid stage '{text}'"))),
        }
    }

    fn count_arg(&self, e: &Expr, env: &Env) -> ExecResult<usize> {
        match self.eval(e, &self.empty_ctx(), env)?.scalar() {
            Value::Long(n) => Ok(n.max(0) as usize),
            Value::Real(n) if n.is_finite() => Ok(n.max(0.0) as usize),
            other => Err(ExecError::Type(format!(
                "row count must be a number, got {}",
                other.type_name()
            ))),
        }
    }

    fn extend(&self, items: &[NamedExpr], mut frame: Frame, env: &Env) -> ExecResult<Frame> {
        for (item, name) in items.iter().zip(output_names(items)) {
            let values = self.column_values(&item.expr, &frame, env)?;
            frame.set_column(&name, values);
        }
        Ok(frame)
    }

    fn sort(&self, keys: &[SortKey], frame: &mut Frame, env: &Env) -> ExecResult<()> {
        let mut columns = Vec::with_capacity(keys.len());
        for k in keys {
            columns.push(self.column_values(&k.expr, frame, env)?);
        }
        let mut order: Vec<usize> = (0..frame.rows.len()).collect();
        order.sort_by(|&a, &b| {
            for (k, vals) in keys.iter().zip(&columns) {
                let desc = k.order != Some(SortOrder::Asc);
                let nulls_first = match k.nulls {
                    Some(NullsPosition::First) => true,
                    Some(NullsPosition::Last) => false,
                    None => !desc,
                };
                let (x, y) = (vals[a].scalar(), vals[b].scalar());
                let ord = match (x.is_null(), y.is_null()) {
                    (true, true) => Ordering::Equal,
                    (true, false) => {
                        if nulls_first {
                            Ordering::Less
                        } else {
                            Ordering::Greater
                        }
                    }
                    (false, true) => {
                        if nulls_first {
                            Ordering::Greater
                        } else {
                            Ordering::Less
                        }
                    }
                    (false, false) => {
                        let o = value::sort_cmp(&x, &y);
                        if desc {
                            o.reverse()
                        } else {
                            o
                        }
                    }
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        });
        let mut rows: Vec<Option<Vec<Value>>> = std::mem::take(&mut frame.rows).into_iter().map(Some).collect();
        frame.rows = order.into_iter().map(|i| rows[i].take().unwrap()).collect();
        Ok(())
    }

    fn summarize(
        &self,
        aggregates: &[NamedExpr],
        by: &[NamedExpr],
        frame: Frame,
        env: &Env,
    ) -> ExecResult<Frame> {
        let idx = frame.index();
        let mut key_columns = Vec::with_capacity(by.len());
        for item in by {
            key_columns.push(self.column_values(&item.expr, &frame, env)?);
        }
        // groups in first-appearance order
        let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        if by.is_empty() {
            groups.push((Vec::new(), (0..frame.rows.len()).collect()));
        } else {
            for r in 0..frame.rows.len() {
                let keys: Vec<Value> = key_columns.iter().map(|c| c[r].clone()).collect();
                let k = row_key(&keys);
                match lookup.get(&k) {
                    Some(&g) => groups[g].1.push(r),
                    None => {
                        lookup.insert(k, groups.len());
                        groups.push((keys, vec![r]));
                    }
                }
            }
        }

        enum Slot<'e> {
            By(usize),
            Agg(usize),
            Extra(usize, &'e Expr),
            ExtraColumn(usize, usize),
        }
        let mut columns: Vec<String> = Vec::new();
        let mut slots: Vec<Slot> = Vec::new();
        for (i, name) in output_names(by).into_iter().enumerate() {
            match columns.iter().position(|c| *c == name) {
                Some(p) => slots[p] = Slot::By(i),
                None => {
                    columns.push(name);
                    slots.push(Slot::By(i));
                }
            }
        }
        for (i, (item, name)) in aggregates.iter().zip(output_names(aggregates)).enumerate() {
            columns.push(uniquify(&name, &columns));
            slots.push(Slot::Agg(i));
            if let Expr::Call { name: f, args } = &item.expr {
                if matches!(f.name.as_str(), "arg_max" | "arg_min") {
                    for a in args.iter().skip(1) {
                        match a {
                            Expr::Star => {
                                for (ci, c) in frame.columns.iter().enumerate() {
                                    if !columns.contains(c) {
                                        columns.push(c.clone());
                                        slots.push(Slot::ExtraColumn(i, ci));
                                    }
                                }
                            }
                            other => {
                                if let Some(n) = default_name(other) {
                                    if !columns.contains(&n) {
                                        columns.push(n);
                                        slots.push(Slot::Extra(i, other));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let null_row = vec![Value::Null; frame.columns.len()];
        let mut rows = Vec::with_capacity(groups.len());
        for (keys, members) in &groups {
            let group_rows: Vec<&[Value]> = members.iter().map(|&r| frame.rows[r].as_slice()).collect();
            let rep: &[Value] = group_rows.first().copied().unwrap_or(&null_row);
            let ctx = RowCtx {
                cols: &idx,
                columns: &frame.columns,
                row: rep,
                number: 0,
                serialized: false,
                group: Some(&group_rows),
            };
            let mut agg_values = Vec::with_capacity(aggregates.len());
            let mut arg_rows: Vec<Option<usize>> = Vec::with_capacity(aggregates.len());
            for item in aggregates {
                match &item.expr {
                    Expr::Call { name: f, args } if matches!(f.name.as_str(), "arg_max" | "arg_min") => {
                        let (v, row) = self.arg_extreme(&f.name, args, &group_rows, &ctx, env)?;
                        agg_values.push(v);
                        arg_rows.push(row);
                    }
                    e => {
                        agg_values.push(self.eval(e, &ctx, env)?);
                        arg_rows.push(None);
                    }
                }
            }
            let mut out = Vec::with_capacity(slots.len());
            for slot in &slots {
                out.push(match slot {
                    Slot::By(i) => keys[*i].clone(),
                    Slot::Agg(i) => agg_values[*i].clone(),
                    Slot::ExtraColumn(i, ci) => match arg_rows[*i] {
                        Some(r) => group_rows[r][*ci].clone(),
                        None => Value::Null,
                    },
                    Slot::Extra(i, e) => match arg_rows[*i] {
                        Some(r) => {
                            let row_ctx = RowCtx {
                                cols: &idx,
                                columns: &frame.columns,
                                row: group_rows[r],
                                number: r,
                                serialized: false,
                                group: None,
                            };
                            self.eval(e, &row_ctx, env)?
                        }
                        None => Value::Null,
                    },
                });
            }
            rows.push(out);
        }
        Ok(Frame {
            columns,
            rows,
            serialized: false,
        })
    }

    fn join(&self, kind: JoinKind, left: Frame, right: Frame, on: &[Expr]) -> ExecResult<Frame> {
        let mut pairs = Vec::new();
        for cond in on {
            join_pairs(cond, &mut pairs)?;
        }
        let position = |f: &Frame, name: &str| {
            f.position(name)
                .ok_or_else(|| ExecError::UnknownColumn(name.to_string()))
        };
        let mut lcols = Vec::new();
        let mut rcols = Vec::new();
        for (l, r) in &pairs {
            lcols.push(position(&left, l)?);
            rcols.push(position(&right, r)?);
        }
        let key = |row: &[Value], cols: &[usize]| -> Option<String> {
            let vals: Vec<Value> = cols.iter().map(|&c| row[c].clone()).collect();
            if vals.iter().any(|v| v.scalar().is_null()) {
                None
            } else {
                Some(row_key(&vals))
            }
        };
        let mut right_index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, row) in right.rows.iter().enumerate() {
            if let Some(k) = key(row, &rcols) {
                right_index.entry(k).or_default().push(i);
            }
        }
        let left_keys: Vec<Option<String>> = left.rows.iter().map(|r| key(r, &lcols)).collect();

        if kind.keeps_left_only() {
            let semi = kind == JoinKind::LeftSemi;
            let rows = left
                .rows
                .iter()
                .zip(&left_keys)
                .filter(|(_, k)| k.as_ref().is_some_and(|k| right_index.contains_key(k)) == semi)
                .map(|(r, _)| r.clone())
                .collect();
            return Ok(Frame {
                columns: left.columns,
                rows,
                serialized: false,
            });
        }
        if kind.keeps_right_only() {
            let semi = kind == JoinKind::RightSemi;
            let left_set: BTreeSet<&String> = left_keys.iter().flatten().collect();
            let rows = right
                .rows
                .iter()
                .filter(|r| key(r, &rcols).is_some_and(|k| left_set.contains(&k)) == semi)
                .cloned()
                .collect();
            return Ok(Frame {
                columns: right.columns,
                rows,
                serialized: false,
            });
        }

        let mut columns = left.columns.clone();
        for c in &right.columns {
            let n = uniquify(c, &columns);
            columns.push(n);
        }
        let left_nulls = vec![Value::Null; left.columns.len()];
        let right_nulls = vec![Value::Null; right.columns.len()];
        let mut rows = Vec::new();
        let mut right_matched = vec![false; right.rows.len()];
        let mut seen_left_keys = BTreeSet::new();
        for (lrow, lkey) in left.rows.iter().zip(&left_keys) {
            if kind == JoinKind::InnerUnique {
                match lkey {
                    Some(k) if !seen_left_keys.insert(k.clone()) => continue,
                    _ => {}
                }
            }
            let matches = lkey.as_ref().and_then(|k| right_index.get(k));
            match matches {
                Some(ms) => {
                    for &ri in ms {
                        right_matched[ri] = true;
                        let mut row = lrow.clone();
                        row.extend(right.rows[ri].iter().cloned());
                        rows.push(row);
                    }
                }
                None => {
                    if matches!(kind, JoinKind::LeftOuter | JoinKind::FullOuter) {
                        let mut row = lrow.clone();
                        row.extend(right_nulls.iter().cloned());
                        rows.push(row);
                    }
                }
            }
            self.check_rows(rows.len())?;
        }
        if matches!(kind, JoinKind::RightOuter | JoinKind::FullOuter) {
            for (ri, rrow) in right.rows.iter().enumerate() {
                if !right_matched[ri] {
                    let mut row = left_nulls.clone();
                    row.extend(rrow.iter().cloned());
                    rows.push(row);
                }
            }
        }
        Ok(Frame {
            columns,
            rows,
            serialized: false,
        })
    }

    /// Elements produced by one mv-expand item for one row.
    fn expansion(&self, v: Value, as_array: bool) -> Vec<Json> {
        match v {
            Value::Null => Vec::new(),
            Value::Dynamic(Json::Array(items)) => items,
            Value::Dynamic(Json::Object(map)) => map
                .into_iter()
                .map(|(k, v)| {
                    if as_array {
                        Json::Array(vec![Json::String(k), v])
                    } else {
                        let mut m = serde_json::Map::new();
                        m.insert(k, v);
                        Json::Object(m)
                    }
                })
                .collect(),
            Value::Dynamic(Json::Null) => Vec::new(),
            other => vec![other.to_json()],
        }
    }

    fn mv_expand(
        &self,
        items: &[MvExpandItem],
        frame: Frame,
        env: &Env,
        as_array: bool,
        limit: Option<usize>,
    ) -> ExecResult<Frame> {
        let mut per_item = Vec::with_capacity(items.len());
        for item in items {
            per_item.push(self.column_values(&item.expr, &frame, env)?);
        }
        let names: Vec<String> = items
            .iter()
            .map(|i| match &i.name {
                Some(n) => n.name.clone(),
                None => default_name(&i.expr).unwrap_or_else(|| "Column1".into()),
            })
            .collect();
        let mut out = Frame {
            columns: frame.columns.clone(),
            rows: Vec::new(),
            serialized: false,
        };
        let mut targets = Vec::new();
        for n in &names {
            match out.position(n) {
                Some(p) => targets.push(p),
                None => {
                    out.columns.push(n.clone());
                    targets.push(out.columns.len() - 1);
                }
            }
        }
        let width = out.columns.len();
        for (r, row) in frame.rows.iter().enumerate() {
            let expanded: Vec<Vec<Json>> = per_item
                .iter()
                .map(|vals| self.expansion(vals[r].clone(), as_array))
                .collect();
            let mut n = expanded.iter().map(Vec::len).max().unwrap_or(0);
            if let Some(l) = limit {
                n = n.min(l);
            }
            for j in 0..n {
                let mut new_row = row.clone();
                new_row.resize(width, Value::Null);
                for (k, item) in items.iter().enumerate() {
                    let v = match expanded[k].get(j) {
                        Some(elem) => convert_element(elem, item.to_type.as_deref())?,
                        None => Value::Null,
                    };
                    new_row[targets[k]] = v;
                }
                out.rows.push(new_row);
            }
            self.check_rows(out.rows.len())?;
        }
        Ok(out)
    }

    fn mv_apply(
        &self,
        items: &[MvExpandItem],
        stages: &[Stage],
        frame: Frame,
        env: &Env,
    ) -> ExecResult<Frame> {
        let item_names: Vec<String> = items
            .iter()
            .map(|i| match &i.name {
                Some(n) => n.name.clone(),
                None => default_name(&i.expr).unwrap_or_else(|| "Column1".into()),
            })
            .collect();
        let keep: Vec<usize> = (0..frame.columns.len())
            .filter(|&i| !item_names.contains(&frame.columns[i]))
            .collect();
        let mut columns: Vec<String> = keep.iter().map(|&i| frame.columns[i].clone()).collect();
        let mut rows = Vec::new();
        for row in &frame.rows {
            let single = Frame {
                columns: frame.columns.clone(),
                rows: vec![row.clone()],
                serialized: false,
            };
            let mut sub = self.mv_expand(items, single, env, false, None)?;
            for s in stages {
                sub = self.stage(s, sub, env)?;
            }
            for c in &sub.columns {
                if !columns.contains(c) {
                    columns.push(c.clone());
                }
            }
            for sub_row in sub.rows {
                let mut out: Vec<Value> = keep.iter().map(|&i| row[i].clone()).collect();
                out.resize(columns.len(), Value::Null);
                for (c, v) in sub.columns.iter().zip(sub_row) {
                    let p = columns.iter().position(|x| x == c).expect("column registered");
                    out[p] = v;
                }
                rows.push(out);
            }
            self.check_rows(rows.len())?;
        }
        let width = columns.len();
        for r in &mut rows {
            r.resize(width, Value::Null);
        }
        Ok(Frame {
            columns,
            rows,
            serialized: false,
        })
    }
}

/// Canonical grouping key for a tuple of values.
fn row_key(values: &[Value]) -> String {
    let mut k = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            k.push(SIGNATURE_SEPARATOR);
        }
        k.push_str(&v.canonical());
    }
    k
}

fn union_frames(frames: Vec<Frame>) -> Frame {
    let mut columns: Vec<String> = Vec::new();
    for f in &frames {
        for c in &f.columns {
            if !columns.contains(c) {
                columns.push(c.clone());
            }
        }
    }
    let mut rows = Vec::new();
    for f in frames {
        let map: Vec<Option<usize>> = columns.iter().map(|c| f.position(c)).collect();
        for row in f.rows {
            rows.push(
                map.iter()
                    .map(|m| m.map_or(Value::Null, |i| row[i].clone()))
                    .collect(),
            );
        }
    }
    Frame {
        columns,
        rows,
        serialized: false,
    }
}

/// Collects (left column, right column) equality pairs from a condition.
fn join_pairs(cond: &Expr, out: &mut Vec<(String, String)>) -> ExecResult<()> {
    fn side(e: &Expr) -> Option<(Option<&'static str>, String)> {
        match e {
            Expr::Column(id) if !id.name.starts_with('$') => Some((None, id.name.clone())),
            Expr::Property {
                base,
                key: PropertyKey::Name(n),
            } => match base.as_ref() {
                Expr::Column(b) if b.name == "$left" => Some((Some("left"), n.clone())),
                Expr::Column(b) if b.name == "$right" => Some((Some("right"), n.clone())),
                _ => None,
            },
            _ => None,
        }
    }
    match cond {
        Expr::Binary {
            op: BinaryOp::And,
            left,
            right,
        } => {
            join_pairs(left, out)?;
            join_pairs(right, out)
        }
        Expr::Column(id) => {
            out.push((id.name.clone(), id.name.clone()));
            Ok(())
        }
        Expr::Binary {
            op: BinaryOp::Eq,
            left,
            right,
        } => {
            let (Some(a), Some(b)) = (side(left), side(right)) else {
                return Err(ExecError::Unsupported(
                    "join conditions must compare columns with ==".into(),
                ));
            };
            match (a.0, b.0) {
                (Some("right"), _) | (_, Some("left")) => out.push((b.1, a.1)),
                _ => out.push((a.1, b.1)),
            }
            Ok(())
        }
        _ => Err(ExecError::Unsupported(
            "join conditions must compare columns with ==".into(),
        )),
    }
}

/// Converts one expanded element, honouring `to typeof(T)`.
fn convert_element(elem: &Json, to_type: Option<&str>) -> ExecResult<Value> {
    let v = Value::Dynamic(elem.clone());
    let Some(t) = to_type else {
        return Ok(match elem {
            Json::Null => Value::Null,
            _ => v,
        });
    };
    Ok(match t {
        "string" => match elem {
            Json::Null => Value::Null,
            _ => Value::String(v.to_text()),
        },
        "long" | "int" => functions::to_long(&v),
        "real" | "double" | "decimal" => functions::to_real(&v),
        "bool" | "boolean" => functions::to_bool(&v),
        "datetime" => functions::to_datetime(&v),
        "timespan" => functions::to_timespan(&v),
        "dynamic" => v,
        other => return Err(ExecError::Unsupported(format!("typeof({other})"))),
    })
}

#[cfg(test)]
mod tests;
