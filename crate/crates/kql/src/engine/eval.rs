//! Scalar expression evaluation.

use serde_json::Value as Json;

use crate::ast::*;
use crate::functions::is_aggregate;

use super::value::{self, literal_payload, parse_datetime, parse_dynamic, parse_timespan, Value};
use super::{Env, ExecError, ExecResult, Exec, RowCtx};

fn type_error(op: &str, a: &Value, b: &Value) -> ExecError {
    ExecError::Type(format!(
        "'{op}' cannot combine {} and {}",
        a.type_name(),
        b.type_name()
    ))
}

pub(crate) fn literal_value(lit: &Literal) -> ExecResult<Value> {
    let bad = |what: &str, text: &str| ExecError::InvalidArgument(format!("invalid {what} literal '{text}'"));
    Ok(match lit {
        Literal::String(s) => Value::String(s.clone()),
        Literal::Long(v) => Value::Long(*v),
        Literal::Real(v) => Value::Real(*v),
        Literal::Bool(b) => Value::Bool(*b),
        Literal::DateTime(text) => {
            let inner = literal_payload(text, "datetime").unwrap_or(text).trim();
            if inner == "null" {
                Value::Null
            } else {
                Value::DateTime(parse_datetime(inner).ok_or_else(|| bad("datetime", text))?)
            }
        }
        Literal::Timespan(text) => {
            let inner = literal_payload(text, "timespan").unwrap_or(text).trim();
            if inner == "null" {
                Value::Null
            } else {
                Value::Timespan(parse_timespan(inner).ok_or_else(|| bad("timespan", text))?)
            }
        }
        Literal::Dynamic(text) => {
            let inner = literal_payload(text, "dynamic").unwrap_or(text);
            match parse_dynamic(inner).ok_or_else(|| bad("dynamic", text))? {
                Json::Null => Value::Null,
                j => Value::Dynamic(j),
            }
        }
    })
}

/// Whether `needle` occurs in `hay` as a whole term. `left`/`right` ask
/// for a term boundary on that side.
pub(crate) fn has_term(hay: &str, needle: &str, left: bool, right: bool) -> bool {
    if needle.is_empty() {
        return true;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut start = 0;
    while let Some(pos) = hay[start..].find(needle) {
        let i = start + pos;
        let j = i + needle.len();
        let left_ok = !left || hay[..i].chars().next_back().is_none_or(|c| !is_word(c));
        let right_ok = !right || hay[j..].chars().next().is_none_or(|c| !is_word(c));
        if left_ok && right_ok {
            return true;
        }
        start = i + hay[i..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Equality for `==`/`!=`. `None` means a null operand.
fn equals(a: &Value, b: &Value) -> ExecResult<Option<bool>> {
    let (a, b) = (a.scalar(), b.scalar());
    if a.is_null() || b.is_null() {
        return Ok(None);
    }
    let eq = match (&a, &b) {
        (Value::Long(x), Value::Long(y)) => x == y,
        (Value::Long(_) | Value::Real(_), Value::Long(_) | Value::Real(_)) => a.as_f64() == b.as_f64(),
        (Value::String(x), Value::String(y)) => x == y,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::DateTime(x), Value::DateTime(y)) | (Value::Timespan(x), Value::Timespan(y)) => x == y,
        (Value::Dynamic(x), Value::Dynamic(y)) => value::canonical_json(x) == value::canonical_json(y),
        (Value::Dynamic(_), _) | (_, Value::Dynamic(_)) => false,
        _ => return Err(type_error("==", &a, &b)),
    };
    Ok(Some(eq))
}

fn compare(op: BinaryOp, a: &Value, b: &Value) -> ExecResult<Option<bool>> {
    let (a, b) = (a.scalar(), b.scalar());
    if a.is_null() || b.is_null() {
        return Ok(None);
    }
    let ord = match (&a, &b) {
        (Value::Long(x), Value::Long(y)) => x.cmp(y),
        (Value::Long(_) | Value::Real(_), Value::Long(_) | Value::Real(_)) => {
            match a.as_f64().unwrap().partial_cmp(&b.as_f64().unwrap()) {
                Some(o) => o,
                None => return Ok(Some(false)),
            }
        }
        (Value::String(x), Value::String(y)) => x.cmp(y),
        (Value::DateTime(x), Value::DateTime(y)) | (Value::Timespan(x), Value::Timespan(y)) => x.cmp(y),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => return Err(type_error(op.as_str(), &a, &b)),
    };
    use std::cmp::Ordering::*;
    Ok(Some(match op {
        BinaryOp::Lt => ord == Less,
        BinaryOp::Le => ord != Greater,
        BinaryOp::Gt => ord == Greater,
        BinaryOp::Ge => ord != Less,
        _ => unreachable!("not an ordering operator"),
    }))
}

pub(crate) fn arithmetic(op: BinaryOp, a: &Value, b: &Value) -> ExecResult<Value> {
    use BinaryOp::*;
    let (a, b) = (a.scalar(), b.scalar());
    if a.is_null() || b.is_null() {
        return Ok(Value::Null);
    }
    let real = |x: f64, y: f64| -> Value {
        Value::Real(match op {
            Add => x + y,
            Sub => x - y,
            Mul => x * y,
            Div => x / y,
            Mod => x % y,
            _ => unreachable!(),
        })
    };
    Ok(match (&a, &b) {
        (Value::Long(x), Value::Long(y)) => {
            let (x, y) = (*x, *y);
            let r = match op {
                Add => x.checked_add(y),
                Sub => x.checked_sub(y),
                Mul => x.checked_mul(y),
                Div | Mod if y == 0 => return Ok(Value::Null),
                Div => x.checked_div(y),
                Mod => x.checked_rem(y),
                _ => unreachable!(),
            };
            match r {
                Some(v) => Value::Long(v),
                None => real(x as f64, y as f64),
            }
        }
        (Value::Long(_) | Value::Real(_), Value::Long(_) | Value::Real(_)) => {
            real(a.as_f64().unwrap(), b.as_f64().unwrap())
        }
        (Value::DateTime(x), Value::DateTime(y)) if op == Sub => Value::Timespan(x - y),
        (Value::DateTime(x), Value::Timespan(y)) if op == Add => Value::DateTime(x + y),
        (Value::DateTime(x), Value::Timespan(y)) if op == Sub => Value::DateTime(x - y),
        (Value::Timespan(x), Value::DateTime(y)) if op == Add => Value::DateTime(x + y),
        (Value::Timespan(x), Value::Timespan(y)) => match op {
            Add => Value::Timespan(x + y),
            Sub => Value::Timespan(x - y),
            Div if *y == 0 => Value::Null,
            Div => Value::Real(*x as f64 / *y as f64),
            Mod if *y == 0 => Value::Null,
            Mod => Value::Timespan(x % y),
            _ => return Err(type_error(op.as_str(), &a, &b)),
        },
        (Value::Timespan(x), Value::Long(_) | Value::Real(_)) if matches!(op, Mul | Div) => {
            let f = b.as_f64().unwrap();
            if op == Div && f == 0.0 {
                return Ok(Value::Null);
            }
            let v = if op == Mul { *x as f64 * f } else { *x as f64 / f };
            Value::Timespan(v.round() as i64)
        }
        (Value::Long(_) | Value::Real(_), Value::Timespan(y)) if op == Mul => {
            Value::Timespan((a.as_f64().unwrap() * *y as f64).round() as i64)
        }
        _ => return Err(type_error(op.as_str(), &a, &b)),
    })
}

/// Text operand of a string operator; `None` for null.
fn text_operand(v: &Value) -> Option<String> {
    match v.scalar() {
        Value::Null => None,
        s => Some(s.to_text()),
    }
}

fn truth(v: &Value, what: &str) -> ExecResult<Option<bool>> {
    match v.scalar() {
        Value::Bool(b) => Ok(Some(b)),
        Value::Null => Ok(None),
        other => Err(ExecError::Type(format!(
            "{what} expects bool, got {}",
            other.type_name()
        ))),
    }
}

impl<'a> Exec<'a> {
    pub(crate) fn regex(&self, pattern: &str) -> ExecResult<regex::Regex> {
        if let Some(r) = self.regexes.borrow().get(pattern) {
            return Ok(r.clone());
        }
        let r = regex::Regex::new(pattern)
            .map_err(|e| ExecError::InvalidArgument(format!("regex '{pattern}': {e}")))?;
        self.regexes.borrow_mut().insert(pattern.to_string(), r.clone());
        Ok(r)
    }

    /// First cell of a subquery result, or null.
    pub(crate) fn scalar_subquery(&self, q: &Query, env: &Env) -> ExecResult<Value> {
        let key = q as *const Query;
        if let Some(v) = self.scalar_cache.borrow().get(&key) {
            return Ok(v.clone());
        }
        let frame = self.run_query(q, env)?;
        let v = frame
            .rows
            .first()
            .and_then(|r| r.first())
            .cloned()
            .unwrap_or(Value::Null);
        self.scalar_cache.borrow_mut().insert(key, v.clone());
        Ok(v)
    }

    pub(crate) fn eval(&self, e: &Expr, ctx: &RowCtx, env: &Env) -> ExecResult<Value> {
        match e {
            Expr::Literal(l) => literal_value(l),
            Expr::Column(id) => {
                if let Some(&i) = ctx.cols.get(&id.name) {
                    return Ok(ctx.row[i].clone());
                }
                if let Some(v) = env.scalars.get(&id.name) {
                    return Ok(v.clone());
                }
                if env.tables.contains_key(&id.name) {
                    return Err(ExecError::Type(format!(
                        "tabular value '{}' used as a scalar",
                        id.name
                    )));
                }
                Err(ExecError::UnknownColumn(id.name.clone()))
            }
            Expr::Star => Err(ExecError::Unsupported("'*' outside an argument list".into())),
            Expr::Subquery(q) => self.scalar_subquery(q, env),
            Expr::Call { name, args } => {
                if is_aggregate(&name.name) {
                    match ctx.group {
                        Some(rows) => self.aggregate(&name.name, args, rows, ctx, env),
                        None => Err(ExecError::Type(format!(
                            "aggregate '{}' used outside summarize",
                            name.name
                        ))),
                    }
                } else {
                    self.call(&name.name, args, ctx, env)
                }
            }
            Expr::Case { branches, default } => {
                for (cond, val) in branches {
                    if truth(&self.eval(cond, ctx, env)?, "case condition")? == Some(true) {
                        return self.eval(val, ctx, env);
                    }
                }
                self.eval(default, ctx, env)
            }
            Expr::Unary { op, operand } => {
                let v = self.eval(operand, ctx, env)?.scalar();
                match (op, v) {
                    (_, Value::Null) => Ok(Value::Null),
                    (UnaryOp::Plus, v @ (Value::Long(_) | Value::Real(_) | Value::Timespan(_))) => Ok(v),
                    (UnaryOp::Neg, Value::Long(x)) => Ok(x
                        .checked_neg()
                        .map_or(Value::Real(-(x as f64)), Value::Long)),
                    (UnaryOp::Neg, Value::Real(x)) => Ok(Value::Real(-x)),
                    (UnaryOp::Neg, Value::Timespan(x)) => Ok(Value::Timespan(-x)),
                    (_, v) => Err(ExecError::Type(format!("cannot negate {}", v.type_name()))),
                }
            }
            Expr::Binary { op, left, right } => self.binary(*op, left, right, ctx, env),
            Expr::Between {
                expr,
                low,
                high,
                negated,
            } => {
                let v = self.eval(expr, ctx, env)?;
                let lo = self.eval(low, ctx, env)?;
                let hi = self.eval(high, ctx, env)?;
                let a = compare(BinaryOp::Ge, &v, &lo)?;
                let b = compare(BinaryOp::Le, &v, &hi)?;
                Ok(match (a, b) {
                    (Some(a), Some(b)) => Value::Bool((a && b) != *negated),
                    _ => Value::Bool(false),
                })
            }
            Expr::InList { op, left, items } => self.in_list(*op, left, items, ctx, env),
            Expr::Property { base, key } => {
                let b = self.eval(base, ctx, env)?;
                let json = match b {
                    Value::Null => return Ok(Value::Null),
                    Value::Dynamic(j) => j,
                    Value::String(s) => match serde_json::from_str::<Json>(&s) {
                        Ok(j) => j,
                        Err(_) => return Ok(Value::Null),
                    },
                    other => {
                        return Err(ExecError::Type(format!(
                            "property access on {}",
                            other.type_name()
                        )))
                    }
                };
                let found = match key {
                    PropertyKey::Name(n) => json.get(n.as_str()).cloned(),
                    PropertyKey::Index(i) => match self.eval(i, ctx, env)?.scalar() {
                        Value::Long(n) => match &json {
                            Json::Array(a) => {
                                let idx = if n < 0 { a.len() as i64 + n } else { n };
                                usize::try_from(idx).ok().and_then(|i| a.get(i).cloned())
                            }
                            _ => None,
                        },
                        Value::String(s) => json.get(s.as_str()).cloned(),
                        Value::Null => None,
                        other => {
                            return Err(ExecError::Type(format!(
                                "index must be long or string, got {}",
                                other.type_name()
                            )))
                        }
                    },
                };
                Ok(match found {
                    None | Some(Json::Null) => Value::Null,
                    Some(j) => Value::Dynamic(j),
                })
            }
        }
    }

    fn binary(&self, op: BinaryOp, l: &Expr, r: &Expr, ctx: &RowCtx, env: &Env) -> ExecResult<Value> {
        use BinaryOp::*;
        match op {
            And | Or => {
                let a = truth(&self.eval(l, ctx, env)?, op.as_str())?.unwrap_or(false);
                if op == And && !a {
                    return Ok(Value::Bool(false));
                }
                if op == Or && a {
                    return Ok(Value::Bool(true));
                }
                let b = truth(&self.eval(r, ctx, env)?, op.as_str())?.unwrap_or(false);
                return Ok(Value::Bool(b));
            }
            _ => {}
        }
        let a = self.eval(l, ctx, env)?;
        let b = self.eval(r, ctx, env)?;
        match op {
            Add | Sub | Mul | Div | Mod => arithmetic(op, &a, &b),
            Eq => Ok(Value::Bool(equals(&a, &b)? == Some(true))),
            Ne => Ok(Value::Bool(equals(&a, &b)? == Some(false))),
            Lt | Le | Gt | Ge => Ok(Value::Bool(compare(op, &a, &b)? == Some(true))),
            _ => {
                let (Some(x), Some(y)) = (text_operand(&a), text_operand(&b)) else {
                    return Ok(Value::Bool(false));
                };
                let lower = |s: &str| s.to_lowercase();
                let r = match op {
                    EqCi => lower(&x) == lower(&y),
                    NeCi => lower(&x) != lower(&y),
                    Contains => lower(&x).contains(&lower(&y)),
                    NotContains => !lower(&x).contains(&lower(&y)),
                    ContainsCs => x.contains(&y),
                    NotContainsCs => !x.contains(&y),
                    Has => has_term(&lower(&x), &lower(&y), true, true),
                    NotHas => !has_term(&lower(&x), &lower(&y), true, true),
                    HasCs => has_term(&x, &y, true, true),
                    NotHasCs => !has_term(&x, &y, true, true),
                    HasPrefix => has_term(&lower(&x), &lower(&y), true, false),
                    HasSuffix => has_term(&lower(&x), &lower(&y), false, true),
                    StartsWith => lower(&x).starts_with(&lower(&y)),
                    NotStartsWith => !lower(&x).starts_with(&lower(&y)),
                    StartsWithCs => x.starts_with(&y),
                    EndsWith => lower(&x).ends_with(&lower(&y)),
                    NotEndsWith => !lower(&x).ends_with(&lower(&y)),
                    EndsWithCs => x.ends_with(&y),
                    MatchesRegex => self.regex(&y)?.is_match(&x),
                    _ => unreachable!("handled above"),
                };
                Ok(Value::Bool(r))
            }
        }
    }

    /// Flattened right-hand values of a list operator.
    fn list_values(&self, items: &[Expr], ctx: &RowCtx, env: &Env) -> ExecResult<Vec<Value>> {
        let mut out = Vec::new();
        for item in items {
            match item {
                Expr::Subquery(q) => {
                    let frame = self.run_query(q, env)?;
                    out.extend(frame.rows.into_iter().filter_map(|r| r.into_iter().next()));
                }
                e => match self.eval(e, ctx, env)? {
                    Value::Dynamic(Json::Array(a)) => out.extend(a.iter().map(Value::from_json)),
                    v => out.push(v),
                },
            }
        }
        Ok(out)
    }

    fn in_list(&self, op: ListOp, left: &Expr, items: &[Expr], ctx: &RowCtx, env: &Env) -> ExecResult<Value> {
        let v = self.eval(left, ctx, env)?.scalar();
        if v.is_null() {
            return Ok(Value::Bool(false));
        }
        let list = self.list_values(items, ctx, env)?;
        let r = match op {
            ListOp::In | ListOp::NotIn => {
                let key = v.canonical();
                let found = list.iter().any(|x| x.canonical() == key);
                found == (op == ListOp::In)
            }
            ListOp::InCi | ListOp::NotInCi => {
                let key = v.canonical().to_lowercase();
                let found = list.iter().any(|x| x.canonical().to_lowercase() == key);
                found == (op == ListOp::InCi)
            }
            ListOp::HasAny | ListOp::HasAll => {
                let hay = v.to_text().to_lowercase();
                let mut terms = list
                    .iter()
                    .filter(|x| !x.is_null())
                    .map(|x| has_term(&hay, &x.scalar().to_text().to_lowercase(), true, true));
                if op == ListOp::HasAny {
                    terms.any(|b| b)
                } else {
                    terms.all(|b| b)
                }
            }
        };
        Ok(Value::Bool(r))
    }
}
