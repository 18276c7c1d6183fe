//! Default output column names for unnamed expressions.
//!
//! Shared by the validator and the evaluator so both agree on result
//! schemas.

use crate::ast::{Expr, Literal, NamedExpr, PropertyKey};

/// The name an unnamed expression receives, or `None` when it gets a
/// positional `ColumnN` name.
pub fn default_name(expr: &Expr) -> Option<String> {
    match expr {
        Expr::Column(id) => Some(id.name.clone()),
        Expr::Property { .. } => property_path(expr).map(|p| p.join("_")),
        Expr::Call { name, args } => call_name(&name.name, args),
        _ => None,
    }
}

fn property_path(expr: &Expr) -> Option<Vec<String>> {
    match expr {
        Expr::Column(id) => Some(vec![id.name.clone()]),
        Expr::Property { base, key } => {
            let mut p = property_path(base)?;
            match key {
                PropertyKey::Name(n) => p.push(n.clone()),
                PropertyKey::Index(i) => match &**i {
                    Expr::Literal(Literal::String(s)) => p.push(s.clone()),
                    Expr::Literal(Literal::Long(v)) => p.push(v.to_string()),
                    _ => return None,
                },
            }
            Some(p)
        }
        _ => None,
    }
}

fn first_column(args: &[Expr]) -> Option<String> {
    args.first().and_then(|a| match a {
        Expr::Column(id) => Some(id.name.clone()),
        Expr::Property { .. } => property_path(a).map(|p| p.join("_")),
        _ => None,
    })
}

fn call_name(name: &str, args: &[Expr]) -> Option<String> {
    let col = first_column(args);
    let suffix = col.clone().unwrap_or_default();
    let named = match name {
        // arg functions keep the name of the column they maximize
        "bin" | "floor" | "arg_max" | "arg_min" => return col,
        "count" => "count_".to_string(),
        "countif" => "countif_".to_string(),
        "make_set" | "make_set_if" => format!("set_{suffix}"),
        "make_list" | "make_list_if" => format!("list_{suffix}"),
        "take_any" | "any" => format!("any_{suffix}"),
        "percentile" => {
            let p = match args.get(1) {
                Some(Expr::Literal(Literal::Long(v))) => v.to_string(),
                Some(Expr::Literal(Literal::Real(v))) => v.to_string().replace('.', "_"),
                _ => String::new(),
            };
            format!("percentile_{suffix}_{p}")
        }
        "sum" | "avg" | "min" | "max" | "dcount" | "stdev" | "variance" | "sumif" | "avgif"
        | "minif" | "maxif" | "dcountif" | "make_bag" | "count_distinct" => {
            format!("{name}_{suffix}")
        }
        _ => return None,
    };
    Some(named)
}

/// Output names for a list of projection items, in order. Unnamed items
/// without a natural name become `Column1`, `Column2`, ...
pub fn output_names(items: &[NamedExpr]) -> Vec<String> {
    let mut next = 1;
    items
        .iter()
        .map(|item| match &item.name {
            Some(id) => id.name.clone(),
            None => default_name(&item.expr).unwrap_or_else(|| {
                let n = format!("Column{next}");
                next += 1;
                n
            }),
        })
        .collect()
}

/// Makes `name` unique against `taken` by appending the smallest
/// integer suffix that is free (`Key` becomes `Key1`, then `Key2`).
pub fn uniquify(name: &str, taken: &[String]) -> String {
    if !taken.iter().any(|t| t == name) {
        return name.to_string();
    }
    (1..)
        .map(|i| format!("{name}{i}"))
        .find(|c| !taken.iter().any(|t| t == c))
        .expect("unbounded suffix search")
}
