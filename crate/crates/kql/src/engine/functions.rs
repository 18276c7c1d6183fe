//! Scalar functions.

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use serde_json::Value as Json;

use crate::ast::{Expr, Literal};

use super::value::{
    parse_datetime, parse_timespan, Value, MICROS_PER_DAY, MICROS_PER_HOUR, MICROS_PER_MINUTE,
    MICROS_PER_SECOND,
};
use super::{Env, ExecError, ExecResult, Exec, RowCtx};

pub(crate) fn to_long(v: &Value) -> Value {
    match v.scalar() {
        Value::Long(n) => Value::Long(n),
        Value::Real(x) if x.is_finite() => Value::Long(x.trunc() as i64),
        Value::Bool(b) => Value::Long(b as i64),
        Value::String(s) => {
            let s = s.trim();
            s.parse::<i64>()
                .ok()
                .or_else(|| s.parse::<f64>().ok().filter(|x| x.is_finite()).map(|x| x.trunc() as i64))
                .map_or(Value::Null, Value::Long)
        }
        Value::Timespan(t) => Value::Long(t * 10),
        Value::DateTime(d) => Value::Long(d * 10),
        _ => Value::Null,
    }
}

pub(crate) fn to_real(v: &Value) -> Value {
    match v.scalar() {
        Value::Long(n) => Value::Real(n as f64),
        Value::Real(x) => Value::Real(x),
        Value::Bool(b) => Value::Real(b as i64 as f64),
        Value::String(s) => s.trim().parse::<f64>().map_or(Value::Null, Value::Real),
        _ => Value::Null,
    }
}

pub(crate) fn to_bool(v: &Value) -> Value {
    match v.scalar() {
        Value::Bool(b) => Value::Bool(b),
        Value::Long(n) => Value::Bool(n != 0),
        Value::Real(x) => Value::Bool(x != 0.0),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "1" => Value::Bool(true),
            "false" | "0" => Value::Bool(false),
            _ => Value::Null,
        },
        _ => Value::Null,
    }
}

pub(crate) fn to_datetime(v: &Value) -> Value {
    match v.scalar() {
        Value::DateTime(d) => Value::DateTime(d),
        Value::String(s) => parse_datetime(&s).map_or(Value::Null, Value::DateTime),
        _ => Value::Null,
    }
}

pub(crate) fn to_timespan(v: &Value) -> Value {
    match v.scalar() {
        Value::Timespan(t) => Value::Timespan(t),
        Value::String(s) => parse_timespan(&s).map_or(Value::Null, Value::Timespan),
        Value::Long(n) => Value::Timespan(n / 10),
        _ => Value::Null,
    }
}

fn datetime(us: i64) -> ExecResult<DateTime<Utc>> {
    DateTime::<Utc>::from_timestamp_micros(us)
        .ok_or_else(|| ExecError::InvalidArgument(format!("datetime out of range ({us} us)")))
}

fn micros(d: DateTime<Utc>) -> i64 {
    d.timestamp_micros()
}

fn start_of_day(d: DateTime<Utc>) -> DateTime<Utc> {
    d.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc()
}

fn month_start(year: i32, month: u32) -> ExecResult<DateTime<Utc>> {
    NaiveDate::from_ymd_opt(year, month, 1)
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
        .ok_or_else(|| ExecError::InvalidArgument(format!("invalid month {year}-{month}")))
}

fn add_months(d: DateTime<Utc>, n: i64) -> ExecResult<DateTime<Utc>> {
    let total = d.year() as i64 * 12 + d.month0() as i64 + n;
    let (y, m) = (total.div_euclid(12) as i32, total.rem_euclid(12) as u32 + 1);
    let first = month_start(y, m)?;
    let next = add_months_start(y, m)?;
    let days_in_month = (next - first).num_days() as u32;
    let day = d.day().min(days_in_month);
    Ok(first + Duration::days(day as i64 - 1) + (d - start_of_day(d)))
}

fn add_months_start(y: i32, m: u32) -> ExecResult<DateTime<Utc>> {
    if m == 12 {
        month_start(y + 1, 1)
    } else {
        month_start(y, m + 1)
    }
}

/// Width in microseconds of a fixed-size datetime part.
fn part_micros(part: &str) -> Option<i64> {
    Some(match part {
        "week" | "weeks" => 7 * MICROS_PER_DAY,
        "day" | "days" => MICROS_PER_DAY,
        "hour" | "hours" => MICROS_PER_HOUR,
        "minute" | "minutes" => MICROS_PER_MINUTE,
        "second" | "seconds" => MICROS_PER_SECOND,
        "millisecond" | "milliseconds" => 1000,
        "microsecond" | "microseconds" => 1,
        _ => return None,
    })
}

/// Translates a .NET-style datetime format into text.
fn format_with(d: DateTime<Utc>, fmt: &str) -> String {
    let chars: Vec<char> = fmt.chars().collect();
    let mut out = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut n = 1;
        while i + n < chars.len() && chars[i + n] == c {
            n += 1;
        }
        let s = match c {
            'y' if n >= 4 => format!("{:04}", d.year()),
            'y' => format!("{:02}", d.year() % 100),
            'M' if n >= 2 => format!("{:02}", d.month()),
            'M' => d.month().to_string(),
            'd' if n >= 2 => format!("{:02}", d.day()),
            'd' => d.day().to_string(),
            'H' if n >= 2 => format!("{:02}", d.hour()),
            'H' => d.hour().to_string(),
            'h' => {
                let h = match d.hour() % 12 {
                    0 => 12,
                    h => h,
                };
                if n >= 2 { format!("{h:02}") } else { h.to_string() }
            }
            'm' if n >= 2 => format!("{:02}", d.minute()),
            'm' => d.minute().to_string(),
            's' if n >= 2 => format!("{:02}", d.second()),
            's' => d.second().to_string(),
            'f' | 'F' => {
                let frac = format!("{:07}", d.nanosecond() / 100);
                frac[..n.min(7)].to_string()
            }
            't' => {
                let ampm = if d.hour() < 12 { "AM" } else { "PM" };
                ampm[..n.min(2)].to_string()
            }
            _ => std::iter::repeat_n(c, n).collect(),
        };
        out.push_str(&s);
        i += n;
    }
    out
}

fn json_array(v: &Value) -> Option<Vec<Json>> {
    match v {
        Value::Dynamic(Json::Array(a)) => Some(a.clone()),
        Value::String(s) => match serde_json::from_str(s) {
            Ok(Json::Array(a)) => Some(a),
            _ => None,
        },
        _ => None,
    }
}

fn json_key(j: &Json) -> String {
    Value::from_json(j).canonical()
}

fn parse_ipv4(s: &str) -> Option<u32> {
    s.trim().parse::<std::net::Ipv4Addr>().ok().map(u32::from)
}

fn in_cidr(ip: u32, cidr: &str) -> Option<bool> {
    let (base, bits) = match cidr.split_once('/') {
        Some((b, n)) => (parse_ipv4(b)?, n.trim().parse::<u32>().ok().filter(|n| *n <= 32)?),
        None => (parse_ipv4(cidr)?, 32),
    };
    let mask = if bits == 0 { 0 } else { u32::MAX << (32 - bits) };
    Some(ip & mask == base & mask)
}

fn need(name: &str, args: &[Value], min: usize, max: usize) -> ExecResult<()> {
    if args.len() < min || args.len() > max {
        return Err(ExecError::InvalidArgument(format!(
            "{name}() takes {min}..{max} arguments, got {}",
            args.len()
        )));
    }
    Ok(())
}

fn type_err(name: &str, v: &Value) -> ExecError {
    ExecError::Type(format!("{name}() does not accept {}", v.type_name()))
}

fn long_arg(name: &str, v: &Value) -> ExecResult<Option<i64>> {
    match v.scalar() {
        Value::Null => Ok(None),
        Value::Long(n) => Ok(Some(n)),
        Value::Real(x) if x.is_finite() => Ok(Some(x as i64)),
        other => Err(type_err(name, &other)),
    }
}

fn text_arg(v: &Value) -> Option<String> {
    match v.scalar() {
        Value::Null => None,
        s => Some(s.to_text()),
    }
}

fn unary_real(name: &str, v: &Value, f: impl Fn(f64) -> f64) -> ExecResult<Value> {
    match v.scalar() {
        Value::Null => Ok(Value::Null),
        s => s
            .as_f64()
            .map(|x| Value::Real(f(x)))
            .ok_or_else(|| type_err(name, &s)),
    }
}

/// `bin(value, size)`: rounds down to a multiple of `size`.
fn bin(value: &Value, size: &Value) -> ExecResult<Value> {
    let (v, s) = (value.scalar(), size.scalar());
    Ok(match (&v, &s) {
        (Value::Null, _) | (_, Value::Null) => Value::Null,
        (Value::Long(x), Value::Long(y)) => {
            if *y <= 0 {
                return Err(ExecError::InvalidArgument("bin size must be positive".into()));
            }
            Value::Long(x.div_euclid(*y) * y)
        }
        (Value::Long(_) | Value::Real(_), Value::Long(_) | Value::Real(_)) => {
            let (x, y) = (v.as_f64().unwrap(), s.as_f64().unwrap());
            if y <= 0.0 {
                return Err(ExecError::InvalidArgument("bin size must be positive".into()));
            }
            Value::Real((x / y).floor() * y)
        }
        (Value::DateTime(x), Value::Timespan(y)) | (Value::Timespan(x), Value::Timespan(y)) => {
            if *y <= 0 {
                return Err(ExecError::InvalidArgument("bin size must be positive".into()));
            }
            let r = x.div_euclid(*y) * y;
            if matches!(v, Value::DateTime(_)) {
                Value::DateTime(r)
            } else {
                Value::Timespan(r)
            }
        }
        _ => {
            return Err(ExecError::Type(format!(
                "bin() cannot round {} by {}",
                v.type_name(),
                s.type_name()
            )))
        }
    })
}

impl<'a> Exec<'a> {
    pub(crate) fn call(&self, name: &str, args: &[Expr], ctx: &RowCtx, env: &Env) -> ExecResult<Value> {
        // functions that look at their argument expressions
        match name {
            "row_number" => {
                if !ctx.serialized {
                    return Err(ExecError::InvalidArgument(
                        "row_number() needs a serialized row set".into(),
                    ));
                }
                let start = match args.first() {
                    Some(e) => long_arg(name, &self.eval(e, ctx, env)?)?.unwrap_or(1),
                    None => 1,
                };
                return Ok(Value::Long(start + ctx.number as i64));
            }
            "next" | "prev" => {
                return Err(ExecError::Unsupported(format!("{name}()")));
            }
            "column_ifexists" => {
                if args.len() != 2 {
                    return Err(ExecError::InvalidArgument("column_ifexists() takes 2 arguments".into()));
                }
                let Expr::Literal(Literal::String(col)) = &args[0] else {
                    return Err(ExecError::InvalidArgument(
                        "column_ifexists() needs a constant column name".into(),
                    ));
                };
                return match ctx.cols.get(col) {
                    Some(&i) => Ok(ctx.row[i].clone()),
                    None => self.eval(&args[1], ctx, env),
                };
            }
            "toscalar" => {
                return match args {
                    [Expr::Subquery(q)] => self.scalar_subquery(q, env),
                    [e] => self.eval(e, ctx, env),
                    _ => Err(ExecError::InvalidArgument("toscalar() takes 1 argument".into())),
                };
            }
            "pack_all" => {
                let mut m = serde_json::Map::new();
                for (c, v) in ctx.columns.iter().zip(ctx.row) {
                    m.insert(c.clone(), v.to_json());
                }
                return Ok(Value::Dynamic(Json::Object(m)));
            }
            "iff" | "iif" => {
                if args.len() != 3 {
                    return Err(ExecError::InvalidArgument(format!("{name}() takes 3 arguments")));
                }
                let c = self.eval(&args[0], ctx, env)?.scalar();
                return match c {
                    Value::Bool(true) => self.eval(&args[1], ctx, env),
                    Value::Bool(false) | Value::Null => self.eval(&args[2], ctx, env),
                    other => Err(type_err(name, &other)),
                };
            }
            _ => {}
        }
        let vals = args
            .iter()
            .map(|a| self.eval(a, ctx, env))
            .collect::<ExecResult<Vec<_>>>()?;
        self.call_values(name, &vals)
    }

    fn call_values(&self, name: &str, a: &[Value]) -> ExecResult<Value> {
        let now = self.opts.now;
        let v0 = || a[0].scalar();
        Ok(match name {
            "ago" => {
                need(name, a, 1, 1)?;
                match v0() {
                    Value::Null => Value::Null,
                    Value::Timespan(t) => Value::DateTime(now - t),
                    other => return Err(type_err(name, &other)),
                }
            }
            "now" => {
                need(name, a, 0, 1)?;
                match a.first().map(Value::scalar) {
                    None => Value::DateTime(now),
                    Some(Value::Timespan(t)) => Value::DateTime(now + t),
                    Some(other) => return Err(type_err(name, &other)),
                }
            }
            "bin" => {
                need(name, a, 2, 2)?;
                bin(&a[0], &a[1])?
            }
            "floor" => {
                need(name, a, 1, 2)?;
                if a.len() == 2 {
                    bin(&a[0], &a[1])?
                } else {
                    match v0() {
                        Value::Long(n) => Value::Long(n),
                        other => unary_real(name, &other, f64::floor)?,
                    }
                }
            }
            "ceiling" => {
                need(name, a, 1, 1)?;
                match v0() {
                    Value::Long(n) => Value::Long(n),
                    other => unary_real(name, &other, f64::ceil)?,
                }
            }
            "round" => {
                need(name, a, 1, 2)?;
                let digits = match a.get(1) {
                    Some(d) => long_arg(name, d)?.unwrap_or(0),
                    None => 0,
                };
                match v0() {
                    Value::Long(n) if digits >= 0 => Value::Long(n),
                    other => {
                        let p = 10f64.powi(digits as i32);
                        unary_real(name, &other, |x| (x * p).round() / p)?
                    }
                }
            }
            "abs" => {
                need(name, a, 1, 1)?;
                match v0() {
                    Value::Long(n) => Value::Long(n.wrapping_abs()),
                    Value::Timespan(t) => Value::Timespan(t.abs()),
                    other => unary_real(name, &other, f64::abs)?,
                }
            }
            "sqrt" => {
                need(name, a, 1, 1)?;
                unary_real(name, &a[0], f64::sqrt)?
            }
            "exp" => {
                need(name, a, 1, 1)?;
                unary_real(name, &a[0], f64::exp)?
            }
            "log" => {
                need(name, a, 1, 1)?;
                unary_real(name, &a[0], f64::ln)?
            }
            "log10" => {
                need(name, a, 1, 1)?;
                unary_real(name, &a[0], f64::log10)?
            }
            "pow" => {
                need(name, a, 2, 2)?;
                match (a[0].as_f64(), a[1].as_f64()) {
                    (Some(x), Some(y)) => Value::Real(x.powf(y)),
                    _ if a[0].scalar().is_null() || a[1].scalar().is_null() => Value::Null,
                    _ => return Err(type_err(name, &a[0])),
                }
            }
            "isnan" => {
                need(name, a, 1, 1)?;
                match v0() {
                    Value::Null => Value::Null,
                    s => Value::Bool(s.as_f64().is_some_and(f64::is_nan)),
                }
            }
            "strlen" => {
                need(name, a, 1, 1)?;
                text_arg(&a[0]).map_or(Value::Null, |s| Value::Long(s.chars().count() as i64))
            }
            "tolower" | "toupper" => {
                need(name, a, 1, 1)?;
                text_arg(&a[0]).map_or(Value::Null, |s| {
                    Value::String(if name == "tolower" { s.to_lowercase() } else { s.to_uppercase() })
                })
            }
            "tostring" => {
                need(name, a, 1, 1)?;
                Value::String(a[0].to_text())
            }
            "toguid" => {
                need(name, a, 1, 1)?;
                text_arg(&a[0]).map_or(Value::Null, Value::String)
            }
            "toint" | "tolong" => {
                need(name, a, 1, 1)?;
                to_long(&a[0])
            }
            "toreal" | "todouble" | "todecimal" => {
                need(name, a, 1, 1)?;
                to_real(&a[0])
            }
            "tobool" => {
                need(name, a, 1, 1)?;
                to_bool(&a[0])
            }
            "todatetime" => {
                need(name, a, 1, 1)?;
                to_datetime(&a[0])
            }
            "totimespan" => {
                need(name, a, 1, 1)?;
                to_timespan(&a[0])
            }
            "parse_json" | "todynamic" => {
                need(name, a, 1, 1)?;
                match &a[0] {
                    Value::Null => Value::Null,
                    Value::String(s) => match serde_json::from_str::<Json>(s) {
                        Ok(Json::Null) => Value::Null,
                        Ok(j) => Value::Dynamic(j),
                        Err(_) => Value::Dynamic(Json::String(s.clone())),
                    },
                    Value::Dynamic(j) => Value::Dynamic(j.clone()),
                    other => Value::Dynamic(other.to_json()),
                }
            }
            "isnull" | "isnotnull" => {
                need(name, a, 1, 1)?;
                let null = a[0].scalar().is_null();
                Value::Bool(null == (name == "isnull"))
            }
            "isempty" | "isnotempty" => {
                need(name, a, 1, 1)?;
                let empty = match a[0].scalar() {
                    Value::Null => true,
                    Value::String(s) => s.is_empty(),
                    _ => false,
                };
                Value::Bool(empty == (name == "isempty"))
            }
            "strcat" => {
                Value::String(a.iter().map(Value::to_text).collect())
            }
            "strcat_delim" => {
                need(name, a, 2, usize::MAX)?;
                let d = a[0].to_text();
                Value::String(a[1..].iter().map(Value::to_text).collect::<Vec<_>>().join(&d))
            }
            "strcat_array" => {
                need(name, a, 2, 2)?;
                match json_array(&a[0]) {
                    Some(items) => Value::String(
                        items
                            .iter()
                            .map(|j| Value::from_json(j).to_text())
                            .collect::<Vec<_>>()
                            .join(&a[1].to_text()),
                    ),
                    None => Value::Null,
                }
            }
            "substring" => {
                need(name, a, 2, 3)?;
                let Some(s) = text_arg(&a[0]) else { return Ok(Value::Null) };
                let chars: Vec<char> = s.chars().collect();
                let start = long_arg(name, &a[1])?.unwrap_or(0).clamp(0, chars.len() as i64) as usize;
                let len = match a.get(2) {
                    Some(l) => long_arg(name, l)?.unwrap_or(i64::MAX).max(0) as usize,
                    None => usize::MAX,
                };
                let end = start.saturating_add(len).min(chars.len());
                Value::String(chars[start..end].iter().collect())
            }
            "split" => {
                need(name, a, 2, 3)?;
                let Some(s) = text_arg(&a[0]) else { return Ok(Value::Null) };
                let d = a[1].to_text();
                let parts: Vec<Json> = if d.is_empty() {
                    vec![Json::String(s.clone())]
                } else {
                    s.split(d.as_str()).map(|p| Json::String(p.to_string())).collect()
                };
                match a.get(2) {
                    Some(i) => {
                        let i = long_arg(name, i)?.unwrap_or(0);
                        match usize::try_from(i).ok().and_then(|i| parts.get(i)) {
                            Some(p) => Value::Dynamic(Json::Array(vec![p.clone()])),
                            None => Value::Dynamic(Json::Array(vec![])),
                        }
                    }
                    None => Value::Dynamic(Json::Array(parts)),
                }
            }
            "replace_string" => {
                need(name, a, 3, 3)?;
                let Some(s) = text_arg(&a[0]) else { return Ok(Value::Null) };
                let from = a[1].to_text();
                if from.is_empty() {
                    Value::String(s)
                } else {
                    Value::String(s.replace(&from, &a[2].to_text()))
                }
            }
            "replace_regex" => {
                need(name, a, 3, 3)?;
                let Some(s) = text_arg(&a[0]) else { return Ok(Value::Null) };
                let re = self.regex(&a[1].to_text())?;
                // \1 style back-references become $1
                let rep = regex::Regex::new(r"\\(\d)")
                    .expect("static pattern")
                    .replace_all(&a[2].to_text(), "$${$1}")
                    .into_owned();
                Value::String(re.replace_all(&s, rep.as_str()).into_owned())
            }
            "trim" | "trim_start" | "trim_end" => {
                need(name, a, 2, 2)?;
                let Some(s) = text_arg(&a[1]) else { return Ok(Value::Null) };
                let pat = a[0].to_text();
                let mut out = s.as_str();
                if name != "trim_end" {
                    let re = self.regex(&format!("^(?:{pat})+"))?;
                    if let Some(m) = re.find(out) {
                        out = &out[m.end()..];
                    }
                }
                if name != "trim_start" {
                    let re = self.regex(&format!("(?:{pat})+$"))?;
                    if let Some(m) = re.find(out) {
                        out = &out[..m.start()];
                    }
                }
                Value::String(out.to_string())
            }
            "extract" => {
                need(name, a, 3, 4)?;
                let re = self.regex(&a[0].to_text())?;
                let group = long_arg(name, &a[1])?.unwrap_or(0).max(0) as usize;
                let Some(s) = text_arg(&a[2]) else { return Ok(Value::Null) };
                match re.captures(&s).and_then(|c| c.get(group)) {
                    Some(m) => Value::String(m.as_str().to_string()),
                    None => Value::Null,
                }
            }
            "extract_all" => {
                need(name, a, 2, 2)?;
                let re = self.regex(&a[0].to_text())?;
                let Some(s) = text_arg(&a[1]) else { return Ok(Value::Null) };
                let groups = re.captures_len();
                let items: Vec<Json> = re
                    .captures_iter(&s)
                    .map(|c| {
                        if groups <= 2 {
                            let m = c.get(groups - 1).map_or("", |m| m.as_str());
                            Json::String(m.to_string())
                        } else {
                            Json::Array(
                                (1..groups)
                                    .map(|i| Json::String(c.get(i).map_or("", |m| m.as_str()).to_string()))
                                    .collect(),
                            )
                        }
                    })
                    .collect();
                if items.is_empty() {
                    Value::Null
                } else {
                    Value::Dynamic(Json::Array(items))
                }
            }
            "indexof" => {
                need(name, a, 2, 3)?;
                let (Some(s), Some(n)) = (text_arg(&a[0]), text_arg(&a[1])) else {
                    return Ok(Value::Null);
                };
                let start = match a.get(2) {
                    Some(x) => long_arg(name, x)?.unwrap_or(0).max(0) as usize,
                    None => 0,
                };
                let chars: Vec<char> = s.chars().collect();
                if start > chars.len() {
                    return Ok(Value::Long(-1));
                }
                let tail: String = chars[start..].iter().collect();
                match tail.find(&n) {
                    Some(b) => Value::Long((start + tail[..b].chars().count()) as i64),
                    None => Value::Long(-1),
                }
            }
            "countof" => {
                need(name, a, 2, 2)?;
                let (Some(s), Some(n)) = (text_arg(&a[0]), text_arg(&a[1])) else {
                    return Ok(Value::Null);
                };
                if n.is_empty() {
                    Value::Long(0)
                } else {
                    Value::Long(s.matches(n.as_str()).count() as i64)
                }
            }
            "reverse" => {
                need(name, a, 1, 1)?;
                text_arg(&a[0]).map_or(Value::Null, |s| Value::String(s.chars().rev().collect()))
            }
            "array_length" => {
                need(name, a, 1, 1)?;
                json_array(&a[0]).map_or(Value::Null, |x| Value::Long(x.len() as i64))
            }
            "array_index_of" => {
                need(name, a, 2, 2)?;
                match json_array(&a[0]) {
                    Some(items) => {
                        let key = a[1].canonical();
                        Value::Long(
                            items
                                .iter()
                                .position(|j| json_key(j) == key)
                                .map_or(-1, |i| i as i64),
                        )
                    }
                    None => Value::Null,
                }
            }
            "array_concat" => {
                let mut out = Vec::new();
                for v in a {
                    match json_array(v) {
                        Some(x) => out.extend(x),
                        None => return Ok(Value::Null),
                    }
                }
                Value::Dynamic(Json::Array(out))
            }
            "array_slice" => {
                need(name, a, 3, 3)?;
                let Some(items) = json_array(&a[0]) else { return Ok(Value::Null) };
                let n = items.len() as i64;
                let norm = |i: i64| if i < 0 { n + i } else { i };
                let s = norm(long_arg(name, &a[1])?.unwrap_or(0)).max(0);
                let e = norm(long_arg(name, &a[2])?.unwrap_or(n - 1)).min(n - 1);
                if s > e {
                    Value::Dynamic(Json::Array(vec![]))
                } else {
                    Value::Dynamic(Json::Array(items[s as usize..=e as usize].to_vec()))
                }
            }
            "array_sort_asc" | "array_sort_desc" => {
                need(name, a, 1, 2)?;
                let Some(mut items) = json_array(&a[0]) else { return Ok(Value::Null) };
                items.sort_by(|x, y| super::value::sort_cmp(&Value::from_json(x), &Value::from_json(y)));
                if name == "array_sort_desc" {
                    items.reverse();
                }
                Value::Dynamic(Json::Array(items))
            }
            "bag_keys" => {
                need(name, a, 1, 1)?;
                match &a[0] {
                    Value::Dynamic(Json::Object(m)) => {
                        Value::Dynamic(Json::Array(m.keys().map(|k| Json::String(k.clone())).collect()))
                    }
                    _ => Value::Null,
                }
            }
            "pack" | "bag_pack" => {
                if a.len() % 2 != 0 {
                    return Err(ExecError::InvalidArgument(format!("{name}() needs key/value pairs")));
                }
                let mut m = serde_json::Map::new();
                for kv in a.chunks(2) {
                    m.insert(kv[0].to_text(), kv[1].to_json());
                }
                Value::Dynamic(Json::Object(m))
            }
            "pack_array" => Value::Dynamic(Json::Array(a.iter().map(Value::to_json).collect())),
            "set_has_element" => {
                need(name, a, 2, 2)?;
                match json_array(&a[0]) {
                    Some(items) => {
                        let key = a[1].canonical();
                        Value::Bool(items.iter().any(|j| json_key(j) == key))
                    }
                    None => Value::Null,
                }
            }
            "set_union" | "set_intersect" | "set_difference" => {
                need(name, a, 2, usize::MAX)?;
                let mut sets = Vec::new();
                for v in a {
                    match json_array(v) {
                        Some(x) => sets.push(x),
                        None => return Ok(Value::Null),
                    }
                }
                let mut out: Vec<Json> = Vec::new();
                let mut seen = std::collections::BTreeSet::new();
                let in_set = |s: &Vec<Json>, k: &str| s.iter().any(|j| json_key(j) == k);
                let candidates: Vec<&Json> = if name == "set_union" {
                    sets.iter().flatten().collect()
                } else {
                    sets[0].iter().collect()
                };
                for j in candidates {
                    let k = json_key(j);
                    let keep = match name {
                        "set_intersect" => sets[1..].iter().all(|s| in_set(s, &k)),
                        "set_difference" => !sets[1..].iter().any(|s| in_set(s, &k)),
                        _ => true,
                    };
                    if keep && seen.insert(k) {
                        out.push(j.clone());
                    }
                }
                Value::Dynamic(Json::Array(out))
            }
            "range" => {
                need(name, a, 2, 3)?;
                let step = match a.get(2) {
                    Some(s) => s.clone(),
                    None => match a[0].scalar() {
                        Value::DateTime(_) => Value::Timespan(MICROS_PER_HOUR),
                        _ => Value::Long(1),
                    },
                };
                if a[0].scalar().is_null() || a[1].scalar().is_null() || step.scalar().is_null() {
                    return Ok(Value::Null);
                }
                let items = self.range_values(&a[0], &a[1], &step)?;
                Value::Dynamic(Json::Array(items.iter().map(Value::to_json).collect()))
            }
            "datetime_diff" => {
                need(name, a, 3, 3)?;
                let part = a[0].to_text().to_lowercase();
                let (Value::DateTime(x), Value::DateTime(y)) = (a[1].scalar(), a[2].scalar()) else {
                    if a[1].scalar().is_null() || a[2].scalar().is_null() {
                        return Ok(Value::Null);
                    }
                    return Err(type_err(name, &a[1]));
                };
                let (dx, dy) = (datetime(x)?, datetime(y)?);
                Value::Long(match part.as_str() {
                    "year" => (dx.year() - dy.year()) as i64,
                    "quarter" => {
                        (dx.year() as i64 * 4 + dx.month0() as i64 / 3)
                            - (dy.year() as i64 * 4 + dy.month0() as i64 / 3)
                    }
                    "month" => {
                        (dx.year() as i64 * 12 + dx.month0() as i64)
                            - (dy.year() as i64 * 12 + dy.month0() as i64)
                    }
                    "week" => {
                        // weeks start on Sunday; epoch day 0 was a Thursday
                        let wk = |us: i64| (us.div_euclid(MICROS_PER_DAY) + 4).div_euclid(7);
                        wk(x) - wk(y)
                    }
                    p => match part_micros(p) {
                        Some(w) => x.div_euclid(w) - y.div_euclid(w),
                        None => return Err(ExecError::InvalidArgument(format!("datetime part '{p}'"))),
                    },
                })
            }
            "datetime_add" => {
                need(name, a, 3, 3)?;
                let part = a[0].to_text().to_lowercase();
                let (Some(n), Value::DateTime(d)) = (long_arg(name, &a[1])?, a[2].scalar()) else {
                    return Ok(Value::Null);
                };
                Value::DateTime(match part.as_str() {
                    "year" => micros(add_months(datetime(d)?, n * 12)?),
                    "quarter" => micros(add_months(datetime(d)?, n * 3)?),
                    "month" => micros(add_months(datetime(d)?, n)?),
                    p => match part_micros(p) {
                        Some(w) => d + n * w,
                        None => return Err(ExecError::InvalidArgument(format!("datetime part '{p}'"))),
                    },
                })
            }
            "datetime_part" => {
                need(name, a, 2, 2)?;
                let part = a[0].to_text().to_lowercase();
                let Value::DateTime(d) = a[1].scalar() else { return Ok(Value::Null) };
                let dt = datetime(d)?;
                Value::Long(match part.as_str() {
                    "year" => dt.year() as i64,
                    "quarter" => dt.month0() as i64 / 3 + 1,
                    "month" => dt.month() as i64,
                    "week_of_year" | "weekofyear" => dt.iso_week().week() as i64,
                    "day" => dt.day() as i64,
                    "dayofyear" => dt.ordinal() as i64,
                    "hour" => dt.hour() as i64,
                    "minute" => dt.minute() as i64,
                    "second" => dt.second() as i64,
                    "millisecond" => (dt.nanosecond() / 1_000_000) as i64,
                    "microsecond" => (dt.nanosecond() / 1_000) as i64,
                    p => return Err(ExecError::InvalidArgument(format!("datetime part '{p}'"))),
                })
            }
            "startofday" | "startofweek" | "startofmonth" | "startofyear" | "endofday"
            | "endofweek" | "endofmonth" => {
                need(name, a, 1, 2)?;
                let Value::DateTime(d) = v0() else {
                    return match v0() {
                        Value::Null => Ok(Value::Null),
                        other => Err(type_err(name, &other)),
                    };
                };
                let offset = match a.get(1) {
                    Some(o) => long_arg(name, o)?.unwrap_or(0),
                    None => 0,
                };
                let dt = datetime(d)?;
                let day = start_of_day(dt);
                let week = day - Duration::days(dt.weekday().num_days_from_sunday() as i64);
                let month = month_start(dt.year(), dt.month())?;
                let r = match name {
                    "startofday" => day + Duration::days(offset),
                    "endofday" => day + Duration::days(offset + 1) - Duration::microseconds(1),
                    "startofweek" => week + Duration::weeks(offset),
                    "endofweek" => week + Duration::weeks(offset + 1) - Duration::microseconds(1),
                    "startofmonth" => add_months(month, offset)?,
                    "endofmonth" => add_months(month, offset + 1)? - Duration::microseconds(1),
                    _ => month_start(dt.year() + offset as i32, 1)?,
                };
                Value::DateTime(micros(r))
            }
            "dayofweek" => {
                need(name, a, 1, 1)?;
                match v0() {
                    Value::DateTime(d) => Value::Timespan(
                        datetime(d)?.weekday().num_days_from_sunday() as i64 * MICROS_PER_DAY,
                    ),
                    Value::Null => Value::Null,
                    other => return Err(type_err(name, &other)),
                }
            }
            "dayofmonth" | "dayofyear" | "getmonth" | "monthofyear" | "getyear" | "hourofday"
            | "week_of_year" => {
                need(name, a, 1, 1)?;
                let d = match v0() {
                    Value::DateTime(d) => datetime(d)?,
                    Value::Null => return Ok(Value::Null),
                    other => return Err(type_err(name, &other)),
                };
                Value::Long(match name {
                    "dayofmonth" => d.day() as i64,
                    "dayofyear" => d.ordinal() as i64,
                    "getmonth" | "monthofyear" => d.month() as i64,
                    "getyear" => d.year() as i64,
                    "hourofday" => d.hour() as i64,
                    _ => d.iso_week().week() as i64,
                })
            }
            "format_datetime" => {
                need(name, a, 2, 2)?;
                match v0() {
                    Value::DateTime(d) => Value::String(format_with(datetime(d)?, &a[1].to_text())),
                    Value::Null => Value::Null,
                    other => return Err(type_err(name, &other)),
                }
            }
            "unixtime_seconds_todatetime" | "unixtime_milliseconds_todatetime" => {
                need(name, a, 1, 1)?;
                let scale = if name.contains("milli") { 1_000.0 } else { 1_000_000.0 };
                match v0().as_f64() {
                    Some(x) => Value::DateTime((x * scale).round() as i64),
                    None => Value::Null,
                }
            }
            "coalesce" => a
                .iter()
                .find(|v| match v.scalar() {
                    Value::Null => false,
                    Value::String(s) => !s.is_empty(),
                    _ => true,
                })
                .cloned()
                .unwrap_or(Value::Null),
            "max_of" | "min_of" => {
                let want = if name == "max_of" {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Less
                };
                let mut best: Option<Value> = None;
                for v in a.iter().map(Value::scalar).filter(|v| !v.is_null()) {
                    match &best {
                        Some(b) if super::value::sort_cmp(&v, b) != want => {}
                        _ => best = Some(v),
                    }
                }
                best.unwrap_or(Value::Null)
            }
            "not" => {
                need(name, a, 1, 1)?;
                match v0() {
                    Value::Bool(b) => Value::Bool(!b),
                    Value::Null => Value::Null,
                    other => return Err(type_err(name, &other)),
                }
            }
            "around" => {
                need(name, a, 3, 3)?;
                let (v, c, d) = (v0(), a[1].scalar(), a[2].scalar());
                if v.is_null() || c.is_null() || d.is_null() {
                    return Ok(Value::Null);
                }
                let diff = super::eval::arithmetic(crate::ast::BinaryOp::Sub, &v, &c)?;
                let dist = match diff {
                    Value::Long(n) => Value::Long(n.abs()),
                    Value::Real(x) => Value::Real(x.abs()),
                    Value::Timespan(t) => Value::Timespan(t.abs()),
                    other => return Err(type_err(name, &other)),
                };
                let within = super::value::sort_cmp(&dist, &d) != std::cmp::Ordering::Greater;
                Value::Bool(within)
            }
            "gettype" => {
                need(name, a, 1, 1)?;
                Value::String(
                    match &a[0] {
                        Value::Dynamic(Json::Array(_)) => "array",
                        Value::Dynamic(Json::Object(_)) => "dictionary",
                        Value::Dynamic(j) => Value::from_json(j).type_name(),
                        Value::Real(_) => "real",
                        v => v.type_name(),
                    }
                    .to_string(),
                )
            }
            "tohex" => {
                need(name, a, 1, 2)?;
                match long_arg(name, &a[0])? {
                    Some(n) => Value::String(format!("{n:x}")),
                    None => Value::Null,
                }
            }
            "ipv4_is_private" => {
                need(name, a, 1, 1)?;
                match text_arg(&a[0]).and_then(|s| parse_ipv4(&s)) {
                    Some(ip) => Value::Bool(
                        ["10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16"]
                            .iter()
                            .any(|c| in_cidr(ip, c) == Some(true)),
                    ),
                    None => Value::Null,
                }
            }
            "ipv4_is_in_range" => {
                need(name, a, 2, 2)?;
                match (text_arg(&a[0]).and_then(|s| parse_ipv4(&s)), text_arg(&a[1])) {
                    (Some(ip), Some(c)) => in_cidr(ip, &c).map_or(Value::Null, Value::Bool),
                    _ => Value::Null,
                }
            }
            "materialize" => {
                return Err(ExecError::Unsupported("materialize() outside a let statement".into()))
            }
            other => return Err(ExecError::Unsupported(format!("function {other}()"))),
        })
    }
}
