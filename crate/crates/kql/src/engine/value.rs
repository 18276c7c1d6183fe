use std::cmp::Ordering;
use std::fmt::Write;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, Utc};
use serde_json::Value as Json;

use crate::extract::canonical_real;
use crate::schema::ColumnType;

pub const MICROS_PER_SECOND: i64 = 1_000_000;
pub const MICROS_PER_MINUTE: i64 = 60 * MICROS_PER_SECOND;
pub const MICROS_PER_HOUR: i64 = 60 * MICROS_PER_MINUTE;
pub const MICROS_PER_DAY: i64 = 24 * MICROS_PER_HOUR;

/// A single cell. Datetimes are UTC microseconds since the Unix epoch;
/// timespans are microseconds.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Long(i64),
    Real(f64),
    String(String),
    DateTime(i64),
    Timespan(i64),
    Dynamic(Json),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Long(_) => "long",
            Value::Real(_) => "real",
            Value::String(_) => "string",
            Value::DateTime(_) => "datetime",
            Value::Timespan(_) => "timespan",
            Value::Dynamic(_) => "dynamic",
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Converts a JSON scalar to the matching typed value; arrays and
    /// objects stay dynamic.
    pub fn from_json(j: &Json) -> Value {
        match j {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => match n.as_i64() {
                Some(v) => Value::Long(v),
                None => Value::Real(n.as_f64().unwrap_or(f64::NAN)),
            },
            Json::String(s) => Value::String(s.clone()),
            other => Value::Dynamic(other.clone()),
        }
    }

    /// Unwraps dynamic scalars so they take part in typed operations.
    pub fn scalar(&self) -> Value {
        match self {
            Value::Dynamic(j) => Value::from_json(j),
            other => other.clone(),
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Long(v) => Json::from(*v),
            Value::Real(v) => serde_json::Number::from_f64(*v)
                .map(Json::Number)
                .unwrap_or(Json::Null),
            Value::String(s) => Json::String(s.clone()),
            Value::DateTime(_) | Value::Timespan(_) => Json::String(self.to_text()),
            Value::Dynamic(j) => j.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self.scalar() {
            Value::Long(v) => Some(v as f64),
            Value::Real(v) => Some(v),
            _ => None,
        }
    }

    /// The `tostring()` rendering.
    pub fn to_text(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Long(v) => v.to_string(),
            Value::Real(v) => format_real(*v),
            Value::String(s) => s.clone(),
            Value::DateTime(us) => format_datetime(*us),
            Value::Timespan(us) => format_timespan(*us),
            Value::Dynamic(Json::String(s)) => s.clone(),
            Value::Dynamic(j) => canonical_json(j),
        }
    }

    /// Type-tagged canonical text used for row signatures and grouping.
    /// Numbers compare by value (`3` and `3.0` agree) and dynamic scalars
    /// match their typed equivalents.
    pub fn canonical(&self) -> String {
        match self.scalar() {
            Value::Null => "null".to_string(),
            Value::Bool(b) => format!("b:{b}"),
            Value::Long(v) => format!("n:{v}"),
            Value::Real(v) => format!("n:{}", canonical_real(v)),
            Value::String(s) => format!("s:{s}"),
            Value::DateTime(us) => format!("d:{}", format_datetime(us)),
            Value::Timespan(us) => format!("t:{us}"),
            Value::Dynamic(j) => format!("j:{}", canonical_json(&j)),
        }
    }
}

fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Infinity".into() } else { "-Infinity".into() }
    } else {
        format!("{v}")
    }
}

/// JSON text with sorted object keys and canonical numbers.
pub fn canonical_json(j: &Json) -> String {
    let mut out = String::new();
    write_json(j, &mut out);
    out
}

fn write_json(j: &Json, out: &mut String) {
    match j {
        Json::Null => out.push_str("null"),
        Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Json::Number(n) => match n.as_i64() {
            Some(v) => {
                let _ = write!(out, "{v}");
            }
            None => out.push_str(&canonical_real(n.as_f64().unwrap_or(f64::NAN))),
        },
        Json::String(s) => out.push_str(&Json::String(s.clone()).to_string()),
        Json::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json(item, out);
            }
            out.push(']');
        }
        Json::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Json::String(k.clone()).to_string());
                out.push(':');
                write_json(&map[k], out);
            }
            out.push('}');
        }
    }
}

pub fn format_datetime(us: i64) -> String {
    match DateTime::<Utc>::from_timestamp_micros(us) {
        Some(dt) => {
            let frac = us.rem_euclid(MICROS_PER_SECOND);
            if frac == 0 {
                dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
            } else {
                format!("{}.{:06}0Z", dt.format("%Y-%m-%dT%H:%M:%S"), frac)
            }
        }
        None => us.to_string(),
    }
}

pub fn format_timespan(us: i64) -> String {
    let sign = if us < 0 { "-" } else { "" };
    let abs = us.unsigned_abs();
    let days = abs / MICROS_PER_DAY as u64;
    let rem = abs % MICROS_PER_DAY as u64;
    let h = rem / MICROS_PER_HOUR as u64;
    let m = rem % MICROS_PER_HOUR as u64 / MICROS_PER_MINUTE as u64;
    let s = rem % MICROS_PER_MINUTE as u64 / MICROS_PER_SECOND as u64;
    let frac = rem % MICROS_PER_SECOND as u64;
    let mut out = String::from(sign);
    if days > 0 {
        let _ = write!(out, "{days}.");
    }
    let _ = write!(out, "{h:02}:{m:02}:{s:02}");
    if frac > 0 {
        let _ = write!(out, ".{frac:06}0");
    }
    out
}

/// Parses the datetime forms accepted in data files and `datetime(...)`.
pub fn parse_datetime(text: &str) -> Option<i64> {
    let t = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.with_timezone(&Utc).timestamp_micros());
    }
    let t = t.trim_end_matches('Z');
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Some(dt.and_utc().timestamp_micros());
        }
    }
    for fmt in ["%Y-%m-%d", "%Y/%m/%d"] {
        if let Ok(d) = NaiveDate::parse_from_str(t, fmt) {
            return Some(d.and_time(NaiveTime::MIN).and_utc().timestamp_micros());
        }
    }
    None
}

fn unit_micros(unit: &str) -> Option<f64> {
    Some(match unit {
        "d" | "day" | "days" => MICROS_PER_DAY as f64,
        "h" | "hr" | "hrs" | "hour" | "hours" => MICROS_PER_HOUR as f64,
        "m" | "min" | "minute" | "minutes" => MICROS_PER_MINUTE as f64,
        "s" | "sec" | "second" | "seconds" => MICROS_PER_SECOND as f64,
        "ms" | "milli" | "millis" | "millisecond" | "milliseconds" => 1_000.0,
        "microsecond" | "microseconds" => 1.0,
        "tick" | "ticks" => 0.1,
        _ => return None,
    })
}

/// Parses `1.5h`-style literals and `[-][d.]hh:mm[:ss[.fff]]` clock forms.
pub fn parse_timespan(text: &str) -> Option<i64> {
    let t = text.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let us = if !unit.is_empty() && !unit.contains(':') {
        let n: f64 = num.parse().ok()?;
        (n * unit_micros(unit)?).round() as i64
    } else if t.contains(':') {
        let (days, clock) = match t.split_once(':') {
            Some((head, _)) if head.contains('.') => {
                let (d, h) = head.split_once('.')?;
                (d.parse::<i64>().ok()?, format!("{h}{}", &t[head.len()..]))
            }
            _ => (0, t.to_string()),
        };
        let parts: Vec<&str> = clock.split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return None;
        }
        let h: i64 = parts[0].parse().ok()?;
        let m: i64 = parts[1].parse().ok()?;
        let s: f64 = parts.get(2).map_or(Ok(0.0), |s| s.parse()).ok()?;
        days * MICROS_PER_DAY + h * MICROS_PER_HOUR + m * MICROS_PER_MINUTE
            + (s * MICROS_PER_SECOND as f64).round() as i64
    } else {
        // a bare number is a count of days
        let n: f64 = num.parse().ok()?;
        (n * MICROS_PER_DAY as f64).round() as i64
    };
    Some(if neg { -us } else { us })
}

/// Parses a `dynamic(...)` payload. Single-quoted strings are accepted.
pub fn parse_dynamic(text: &str) -> Option<Json> {
    let t = text.trim();
    if let Ok(j) = serde_json::from_str(t) {
        return Some(j);
    }
    let mut out = String::with_capacity(t.len());
    let mut chars = t.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\'' {
            let mut s = String::new();
            loop {
                match chars.next()? {
                    '\\' => s.push(chars.next()?),
                    '\'' => break,
                    ch => s.push(ch),
                }
            }
            out.push_str(&Json::String(s).to_string());
        } else if c == '"' {
            out.push(c);
            loop {
                let ch = chars.next()?;
                out.push(ch);
                if ch == '\\' {
                    out.push(chars.next()?);
                } else if ch == '"' {
                    break;
                }
            }
        } else {
            out.push(c);
        }
    }
    serde_json::from_str(&out).ok()
}

/// Strips `name(` and `)` from a literal like `datetime(2024-01-01)`.
pub fn literal_payload<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    text.strip_prefix(name)?
        .trim_start()
        .strip_prefix('(')?
        .strip_suffix(')')
}

/// Whether a non-null value fits a declared column type.
pub fn fits(v: &Value, ty: ColumnType) -> bool {
    match (v, ty) {
        (Value::Null, _) => true,
        (Value::Dynamic(_), ColumnType::Dynamic) => true,
        (_, ColumnType::Dynamic) => true,
        (Value::String(_), ColumnType::String | ColumnType::Guid) => true,
        (Value::Long(_), ColumnType::Long | ColumnType::Int) => true,
        (Value::Real(_), ColumnType::Real | ColumnType::Decimal) => true,
        (Value::Bool(_), ColumnType::Bool) => true,
        (Value::DateTime(_), ColumnType::DateTime) => true,
        (Value::Timespan(_), ColumnType::Timespan) => true,
        _ => false,
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Bool(_) => 1,
        Value::Long(_) | Value::Real(_) => 2,
        Value::DateTime(_) => 3,
        Value::Timespan(_) => 4,
        Value::String(_) => 5,
        Value::Dynamic(_) => 6,
    }
}

/// Total order used for sorting. Values of different types order by a
/// fixed type rank; nulls sort lowest here and are placed by the caller.
pub fn sort_cmp(a: &Value, b: &Value) -> Ordering {
    let (a, b) = (a.scalar(), b.scalar());
    match (&a, &b) {
        (Value::Long(x), Value::Long(y)) => x.cmp(y),
        (Value::Long(_) | Value::Real(_), Value::Long(_) | Value::Real(_)) => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            x.total_cmp(&y)
        }
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::String(x), Value::String(y)) => x.cmp(y),
        (Value::DateTime(x), Value::DateTime(y)) | (Value::Timespan(x), Value::Timespan(y)) => {
            x.cmp(y)
        }
        (Value::Dynamic(x), Value::Dynamic(y)) => canonical_json(x).cmp(&canonical_json(y)),
        _ => type_rank(&a).cmp(&type_rank(&b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_share_canonical_text() {
        assert_eq!(Value::Long(3).canonical(), Value::Real(3.0).canonical());
        assert_ne!(Value::Long(3).canonical(), Value::String("3".into()).canonical());
        assert_eq!(
            Value::Dynamic(Json::from("x")).canonical(),
            Value::String("x".into()).canonical()
        );
    }

    #[test]
    fn datetime_forms() {
        let a = parse_datetime("2024-01-01").unwrap();
        assert_eq!(parse_datetime("2024-01-01T00:00:00Z"), Some(a));
        assert_eq!(parse_datetime("2024-01-01 00:00"), Some(a));
        assert_eq!(format_datetime(a), "2024-01-01T00:00:00Z");
        assert_eq!(parse_datetime("2024-01-01T00:00:01.5Z"), Some(a + 1_500_000));
        assert!(parse_datetime("yesterday").is_none());
    }

    #[test]
    fn timespan_forms() {
        assert_eq!(parse_timespan("1d"), Some(MICROS_PER_DAY));
        assert_eq!(parse_timespan("1.5h"), Some(MICROS_PER_HOUR * 3 / 2));
        assert_eq!(parse_timespan("30m"), Some(30 * MICROS_PER_MINUTE));
        assert_eq!(parse_timespan("100ms"), Some(100_000));
        assert_eq!(parse_timespan("00:10:00"), Some(10 * MICROS_PER_MINUTE));
        assert_eq!(parse_timespan("1.02:00:00"), Some(MICROS_PER_DAY + 2 * MICROS_PER_HOUR));
        assert_eq!(parse_timespan("-5s"), Some(-5 * MICROS_PER_SECOND));
        assert_eq!(format_timespan(MICROS_PER_DAY + 2 * MICROS_PER_HOUR), "1.02:00:00");
    }

    #[test]
    fn dynamic_single_quotes() {
        assert_eq!(parse_dynamic("['a', \"b\"]").unwrap(), serde_json::json!(["a", "b"]));
        assert_eq!(parse_dynamic("{'k': 1}").unwrap(), serde_json::json!({"k": 1}));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let j = serde_json::json!({"b": 1.0, "a": [1, 2.5]});
        assert_eq!(canonical_json(&j), "{\"a\":[1,2.5],\"b\":1}");
    }
}
