//! Aggregation functions over the rows of one summarize group.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde_json::Value as Json;

use crate::ast::Expr;

use super::eval::arithmetic;
use super::value::{sort_cmp, Value};
use super::{Env, ExecError, ExecResult, Exec, RowCtx};

fn arity(name: &str, args: &[Expr], min: usize, max: usize) -> ExecResult<()> {
    if args.len() < min || args.len() > max {
        return Err(ExecError::InvalidArgument(format!(
            "{name}() takes {min}..{max} arguments, got {}",
            args.len()
        )));
    }
    Ok(())
}

fn is_true(v: &Value) -> bool {
    matches!(v.scalar(), Value::Bool(true))
}

fn numeric_sum(values: &[Value]) -> ExecResult<Value> {
    let mut acc = Value::Null;
    for v in values {
        let v = v.scalar();
        match &v {
            Value::Null => continue,
            Value::Long(_) | Value::Real(_) | Value::Timespan(_) => {}
            other => {
                return Err(ExecError::Type(format!("sum over {}", other.type_name())))
            }
        }
        acc = if acc.is_null() {
            v
        } else {
            arithmetic(crate::ast::BinaryOp::Add, &acc, &v)?
        };
    }
    Ok(acc)
}

fn extreme(values: &[Value], want: Ordering) -> Value {
    let mut best: Option<Value> = None;
    for v in values {
        let v = v.scalar();
        if v.is_null() {
            continue;
        }
        match &best {
            Some(b) if sort_cmp(&v, b) != want => {}
            _ => best = Some(v),
        }
    }
    best.unwrap_or(Value::Null)
}

fn sample_variance(values: &[Value]) -> ExecResult<Value> {
    let mut xs = Vec::new();
    for v in values {
        match v.scalar() {
            Value::Null => {}
            s => xs.push(s.as_f64().ok_or_else(|| {
                ExecError::Type(format!("variance over {}", s.type_name()))
            })?),
        }
    }
    if xs.is_empty() {
        return Ok(Value::Null);
    }
    if xs.len() == 1 {
        return Ok(Value::Real(0.0));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Ok(Value::Real(
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0),
    ))
}

fn collect_json(values: &[Value], distinct: bool, max: usize) -> Value {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |j: Json, out: &mut Vec<Json>| {
        if out.len() >= max || j.is_null() {
            return;
        }
        if distinct && !seen.insert(Value::Dynamic(j.clone()).canonical()) {
            return;
        }
        out.push(j);
    };
    for v in values {
        match v {
            Value::Null => {}
            Value::Dynamic(Json::Array(items)) => {
                for j in items {
                    push(j.clone(), &mut out);
                }
            }
            other => push(other.to_json(), &mut out),
        }
    }
    Value::Dynamic(Json::Array(out))
}

impl<'a> Exec<'a> {
    /// Evaluates `e` on every row of the group.
    fn per_row(&self, e: &Expr, rows: &[&[Value]], ctx: &RowCtx, env: &Env) -> ExecResult<Vec<Value>> {
        rows.iter()
            .enumerate()
            .map(|(i, row)| {
                let rc = RowCtx {
                    cols: ctx.cols,
                    columns: ctx.columns,
                    row,
                    number: i,
                    serialized: false,
                    group: None,
                };
                self.eval(e, &rc, env)
            })
            .collect()
    }

    /// Values of `value` on the rows where `pred` holds.
    fn filtered(
        &self,
        value: &Expr,
        pred: &Expr,
        rows: &[&[Value]],
        ctx: &RowCtx,
        env: &Env,
    ) -> ExecResult<Vec<Value>> {
        let vals = self.per_row(value, rows, ctx, env)?;
        let keep = self.per_row(pred, rows, ctx, env)?;
        Ok(vals
            .into_iter()
            .zip(keep)
            .filter(|(_, k)| is_true(k))
            .map(|(v, _)| v)
            .collect())
    }

    fn max_size(&self, arg: Option<&Expr>, env: &Env) -> ExecResult<usize> {
        match arg {
            None => Ok(1_048_576),
            Some(e) => match self.eval(e, &self.empty_ctx(), env)?.scalar() {
                Value::Long(n) if n > 0 => Ok(n as usize),
                other => Err(ExecError::InvalidArgument(format!(
                    "max size must be a positive long, got {}",
                    other.to_text()
                ))),
            },
        }
    }

    pub(crate) fn aggregate(
        &self,
        name: &str,
        args: &[Expr],
        rows: &[&[Value]],
        ctx: &RowCtx,
        env: &Env,
    ) -> ExecResult<Value> {
        match name {
            "count" => {
                arity(name, args, 0, 1)?;
                match args.first() {
                    None => Ok(Value::Long(rows.len() as i64)),
                    Some(e) => {
                        let vals = self.per_row(e, rows, ctx, env)?;
                        Ok(Value::Long(vals.iter().filter(|v| !v.scalar().is_null()).count() as i64))
                    }
                }
            }
            "countif" => {
                arity(name, args, 1, 1)?;
                let vals = self.per_row(&args[0], rows, ctx, env)?;
                Ok(Value::Long(vals.iter().filter(|v| is_true(v)).count() as i64))
            }
            "dcount" | "count_distinct" | "dcountif" => {
                let vals = if name == "dcountif" {
                    arity(name, args, 2, 3)?;
                    self.filtered(&args[0], &args[1], rows, ctx, env)?
                } else {
                    arity(name, args, 1, 2)?;
                    self.per_row(&args[0], rows, ctx, env)?
                };
                let set: BTreeSet<String> = vals
                    .iter()
                    .filter(|v| !v.scalar().is_null())
                    .map(Value::canonical)
                    .collect();
                Ok(Value::Long(set.len() as i64))
            }
            "sum" => {
                arity(name, args, 1, 1)?;
                numeric_sum(&self.per_row(&args[0], rows, ctx, env)?)
            }
            "sumif" => {
                arity(name, args, 2, 2)?;
                numeric_sum(&self.filtered(&args[0], &args[1], rows, ctx, env)?)
            }
            "avg" | "avgif" => {
                let vals = if name == "avgif" {
                    arity(name, args, 2, 2)?;
                    self.filtered(&args[0], &args[1], rows, ctx, env)?
                } else {
                    arity(name, args, 1, 1)?;
                    self.per_row(&args[0], rows, ctx, env)?
                };
                let n = vals.iter().filter(|v| !v.scalar().is_null()).count();
                match numeric_sum(&vals)? {
                    Value::Null => Ok(Value::Null),
                    Value::Timespan(t) => Ok(Value::Timespan(t / n as i64)),
                    s => Ok(Value::Real(s.as_f64().unwrap_or(f64::NAN) / n as f64)),
                }
            }
            "min" | "max" => {
                arity(name, args, 1, 1)?;
                let vals = self.per_row(&args[0], rows, ctx, env)?;
                Ok(extreme(&vals, if name == "max" { Ordering::Greater } else { Ordering::Less }))
            }
            "minif" | "maxif" => {
                arity(name, args, 2, 2)?;
                let vals = self.filtered(&args[0], &args[1], rows, ctx, env)?;
                Ok(extreme(&vals, if name == "maxif" { Ordering::Greater } else { Ordering::Less }))
            }
            "make_set" | "make_list" => {
                arity(name, args, 1, 2)?;
                let vals = self.per_row(&args[0], rows, ctx, env)?;
                let max = self.max_size(args.get(1), env)?;
                Ok(collect_json(&vals, name == "make_set", max))
            }
            "make_set_if" | "make_list_if" => {
                arity(name, args, 2, 3)?;
                let vals = self.filtered(&args[0], &args[1], rows, ctx, env)?;
                let max = self.max_size(args.get(2), env)?;
                Ok(collect_json(&vals, name == "make_set_if", max))
            }
            "make_bag" => {
                arity(name, args, 1, 2)?;
                let mut bag = serde_json::Map::new();
                for v in self.per_row(&args[0], rows, ctx, env)? {
                    if let Value::Dynamic(Json::Object(m)) = v {
                        for (k, x) in m {
                            bag.entry(k).or_insert(x);
                        }
                    }
                }
                Ok(Value::Dynamic(Json::Object(bag)))
            }
            "percentile" => {
                arity(name, args, 2, 2)?;
                let p = self
                    .eval(&args[1], &self.empty_ctx(), env)?
                    .as_f64()
                    .filter(|p| (0.0..=100.0).contains(p))
                    .ok_or_else(|| ExecError::InvalidArgument("percentile must be in 0..100".into()))?;
                let mut vals: Vec<Value> = self
                    .per_row(&args[0], rows, ctx, env)?
                    .into_iter()
                    .map(|v| v.scalar())
                    .filter(|v| !v.is_null())
                    .collect();
                if vals.is_empty() {
                    return Ok(Value::Null);
                }
                vals.sort_by(sort_cmp);
                // nearest rank
                let rank = ((p / 100.0) * vals.len() as f64).ceil().max(1.0) as usize;
                Ok(vals[rank.min(vals.len()) - 1].clone())
            }
            "stdev" | "variance" => {
                arity(name, args, 1, 1)?;
                let var = sample_variance(&self.per_row(&args[0], rows, ctx, env)?)?;
                Ok(match var {
                    Value::Real(v) if name == "stdev" => Value::Real(v.sqrt()),
                    other => other,
                })
            }
            "take_any" | "any" => {
                arity(name, args, 1, 1)?;
                let vals = self.per_row(&args[0], rows, ctx, env)?;
                Ok(vals.into_iter().find(|v| !v.is_null()).unwrap_or(Value::Null))
            }
            "arg_max" | "arg_min" => Err(ExecError::Unsupported(format!(
                "{name}() nested inside an expression"
            ))),
            other => Err(ExecError::Unsupported(format!("aggregate {other}()"))),
        }
    }

    /// The extreme value of the first argument and the index of the first
    /// group row reaching it.
    pub(crate) fn arg_extreme(
        &self,
        name: &str,
        args: &[Expr],
        rows: &[&[Value]],
        ctx: &RowCtx,
        env: &Env,
    ) -> ExecResult<(Value, Option<usize>)> {
        if args.is_empty() {
            return Err(ExecError::InvalidArgument(format!("{name}() needs arguments")));
        }
        let want = if name == "arg_max" { Ordering::Greater } else { Ordering::Less };
        let vals = self.per_row(&args[0], rows, ctx, env)?;
        let mut best: Option<(Value, usize)> = None;
        for (i, v) in vals.into_iter().enumerate() {
            let v = v.scalar();
            if v.is_null() {
                continue;
            }
            match &best {
                Some((b, _)) if sort_cmp(&v, b) != want => {}
                _ => best = Some((v, i)),
            }
        }
        Ok(match best {
            Some((v, i)) => (v, Some(i)),
            None => (Value::Null, None),
        })
    }
}
