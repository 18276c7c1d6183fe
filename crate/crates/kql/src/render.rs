//! Canonical source rendering.
//!
//! Top-level stages go one per line (`\n| stage`); nested queries are
//! rendered inline. `parse(render(q))` reproduces `q` for every tree the
//! parser produces without syntax errors.

use std::fmt::Write;

use crate::ast::*;
use crate::lexer::is_keyword;

pub fn render(query: &Query) -> String {
    let mut out = String::new();
    for b in &query.lets {
        out.push_str("let ");
        out.push_str(&ident(&b.name.name));
        out.push_str(" = ");
        match &b.value {
            LetValue::Scalar(e) => out.push_str(&expr(e)),
            LetValue::Tabular(q) => out.push_str(&inline_query(q)),
        }
        out.push_str(";\n");
    }
    out.push_str(&source(&query.source));
    for s in &query.stages {
        out.push_str("\n| ");
        out.push_str(&stage(s));
    }
    out
}

/// Renders a query on a single line with ` | ` between stages.
pub fn inline_query(query: &Query) -> String {
    let mut out = String::new();
    for b in &query.lets {
        let _ = write!(out, "let {} = ", ident(&b.name.name));
        match &b.value {
            LetValue::Scalar(e) => out.push_str(&expr(e)),
            LetValue::Tabular(q) => out.push_str(&inline_query(q)),
        }
        out.push_str("; ");
    }
    out.push_str(&source(&query.source));
    for s in &query.stages {
        out.push_str(" | ");
        out.push_str(&stage(s));
    }
    out
}

fn is_plain_ident(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first.is_ascii_alphabetic() || first == '_' || first == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_keyword(name)
}

/// An identifier, bracket-quoted when it is not a plain name.
pub fn ident(name: &str) -> String {
    if is_plain_ident(name) {
        name.to_string()
    } else {
        let escaped = name.replace('\\', "\\\\").replace('\'', "\\'");
        format!("['{escaped}']")
    }
}

pub fn string_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::String(s) => string_literal(s),
        Literal::Long(v) => v.to_string(),
        Literal::Real(v) => format!("{v:?}"),
        Literal::Bool(b) => b.to_string(),
        Literal::DateTime(t) | Literal::Timespan(t) | Literal::Dynamic(t) => t.clone(),
    }
}

fn source(s: &Source) -> String {
    match s {
        Source::Table(id) => ident(&id.name),
        Source::Union(items) => format!("union {}", union_items(items)),
        Source::Subquery(q) => format!("({})", inline_query(q)),
        Source::Range {
            column,
            from,
            to,
            step,
        } => format!(
            "range {} from {} to {} step {}",
            ident(&column.name),
            expr(from),
            expr(to),
            expr(step)
        ),
    }
}

fn union_items(items: &[Source]) -> String {
    items
        .iter()
        .map(|s| match s {
            Source::Table(id) => ident(&id.name),
            other => match other {
                Source::Subquery(q) => format!("({})", inline_query(q)),
                _ => format!("({})", source(other)),
            },
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn named(items: &[NamedExpr]) -> String {
    items
        .iter()
        .map(|n| match &n.name {
            Some(id) => format!("{} = {}", ident(&id.name), expr(&n.expr)),
            None => expr(&n.expr),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn sort_key(k: &SortKey) -> String {
    let mut out = expr(&k.expr);
    match k.order {
        Some(SortOrder::Asc) => out.push_str(" asc"),
        Some(SortOrder::Desc) => out.push_str(" desc"),
        None => {}
    }
    match k.nulls {
        Some(NullsPosition::First) => out.push_str(" nulls first"),
        Some(NullsPosition::Last) => out.push_str(" nulls last"),
        None => {}
    }
    out
}

fn mv_items(items: &[MvExpandItem]) -> String {
    items
        .iter()
        .map(|i| {
            let mut out = String::new();
            if let Some(n) = &i.name {
                let _ = write!(out, "{} = ", ident(&n.name));
            }
            out.push_str(&expr(&i.expr));
            if let Some(t) = &i.to_type {
                let _ = write!(out, " to typeof({t})");
            }
            out
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn join_exprs(es: &[Expr]) -> String {
    es.iter().map(expr).collect::<Vec<_>>().join(", ")
}

pub fn stage(s: &Stage) -> String {
    match s {
        Stage::Where(e) => format!("where {}", expr(e)),
        Stage::Project(items) => format!("project {}", named(items)),
        Stage::ProjectAway(names) => format!(
            "project-away {}",
            names.iter().map(|n| ident(&n.name)).collect::<Vec<_>>().join(", ")
        ),
        Stage::ProjectRename(pairs) => format!(
            "project-rename {}",
            pairs
                .iter()
                .map(|(n, o)| format!("{} = {}", ident(&n.name), ident(&o.name)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        Stage::Extend(items) => format!("extend {}", named(items)),
        Stage::Summarize { aggregates, by } => {
            let mut out = "summarize".to_string();
            if !aggregates.is_empty() {
                out.push(' ');
                out.push_str(&named(aggregates));
            }
            if !by.is_empty() {
                out.push_str(" by ");
                out.push_str(&named(by));
            }
            out
        }
        Stage::Order(keys) => format!(
            "order by {}",
            keys.iter().map(sort_key).collect::<Vec<_>>().join(", ")
        ),
        Stage::Take(e) => format!("take {}", expr(e)),
        Stage::Top { count, key } => format!("top {} by {}", expr(count), sort_key(key)),
        Stage::Distinct(cols) if cols.is_empty() => "distinct *".to_string(),
        Stage::Distinct(cols) => format!("distinct {}", join_exprs(cols)),
        Stage::Count => "count".to_string(),
        Stage::Join { kind, right, on } => format!(
            "join kind={} ({}) on {}",
            kind.as_str(),
            inline_query(right),
            join_exprs(on)
        ),
        Stage::Union(items) => format!("union {}", union_items(items)),
        Stage::MvExpand {
            bag_expansion,
            items,
            limit,
        } => {
            let mut out = "mv-expand ".to_string();
            if let Some(b) = bag_expansion {
                let _ = write!(out, "bagexpansion={} ", ident(b));
            }
            out.push_str(&mv_items(items));
            if let Some(l) = limit {
                let _ = write!(out, " limit {}", expr(l));
            }
            out
        }
        Stage::MvApply { items, stages } => format!(
            "mv-apply {} on ({})",
            mv_items(items),
            stages.iter().map(stage).collect::<Vec<_>>().join(" | ")
        ),
        Stage::Serialize(items) if items.is_empty() => "serialize".to_string(),
        Stage::Serialize(items) => format!("serialize {}", named(items)),
        Stage::Render {
            visualization,
            properties,
        } => {
            let mut out = format!("render {}", ident(&visualization.name));
            if !properties.is_empty() {
                let props = properties
                    .iter()
                    .map(|(k, v)| format!("{} = {}", ident(&k.name), expr(v)))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = write!(out, " with ({props})");
            }
            out
        }
        Stage::Assignment(items) => named(items),
        Stage::Invalid(text) => text.clone(),
    }
}

fn wrap(e: &Expr, parens: bool) -> String {
    if parens {
        format!("({})", expr(e))
    } else {
        expr(e)
    }
}

fn is_numeric_literal(e: &Expr) -> bool {
    matches!(e, Expr::Literal(Literal::Long(_)) | Expr::Literal(Literal::Real(_)))
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Column(id) => ident(&id.name),
        Expr::Literal(l) => literal(l),
        Expr::Call { name, args } => format!("{}({})", name.name, join_exprs(args)),
        Expr::Case { branches, default } => {
            let mut parts = Vec::new();
            for (c, v) in branches {
                parts.push(expr(c));
                parts.push(expr(v));
            }
            parts.push(expr(default));
            format!("case({})", parts.join(", "))
        }
        Expr::Unary { op, operand } => {
            let sign = match op {
                UnaryOp::Neg => "-",
                UnaryOp::Plus => "+",
            };
            // a sign directly before a number literal folds into the literal
            let parens = operand.precedence() < PREC_UNARY || is_numeric_literal(operand);
            format!("{sign}{}", wrap(operand, parens))
        }
        Expr::Binary { op, left, right } => {
            let p = op.precedence();
            format!(
                "{} {} {}",
                wrap(left, left.precedence() < p),
                op.as_str(),
                wrap(right, right.precedence() <= p)
            )
        }
        Expr::InList { op, left, items } => format!(
            "{} {} ({})",
            wrap(left, left.precedence() < PREC_COMPARE),
            op.as_str(),
            join_exprs(items)
        ),
        Expr::Between {
            expr: inner,
            low,
            high,
            negated,
        } => format!(
            "{} {} ({} .. {})",
            wrap(inner, inner.precedence() < PREC_COMPARE),
            if *negated { "!between" } else { "between" },
            wrap(low, low.precedence() <= PREC_COMPARE),
            wrap(high, high.precedence() <= PREC_COMPARE)
        ),
        Expr::Property { base, key } => {
            let b = wrap(base, base.precedence() < PREC_POSTFIX);
            match key {
                PropertyKey::Name(n) if is_plain_ident(n) || is_keyword(n) => format!("{b}.{n}"),
                PropertyKey::Name(n) => format!("{b}.{}", ident(n)),
                PropertyKey::Index(i) => format!("{b}[{}]", expr(i)),
            }
        }
        Expr::Subquery(q) => format!("({})", inline_query(q)),
        Expr::Star => "*".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn round_trip(text: &str) -> String {
        let q = parse(text).query.unwrap();
        let out = render(&q);
        let again = parse(&out);
        assert!(again.diagnostics.is_empty(), "{out}: {:?}", again.diagnostics);
        assert_eq!(again.query.unwrap(), q, "{out}");
        out
    }

    #[test]
    fn canonical_take() {
        assert_eq!(round_trip("TableName | take 100"), "TableName\n| take 100");
    }

    #[test]
    fn canonical_join() {
        assert_eq!(
            round_trip("TableA | join kind=inner TableB on $left.JoinKey == $right.KeyColumn"),
            "TableA\n| join kind=inner (TableB) on $left.JoinKey == $right.KeyColumn"
        );
    }

    #[test]
    fn precedence_parens_are_kept() {
        assert_eq!(
            round_trip("T | where (A == 1 or B == 2) and C == 3"),
            "T\n| where (A == 1 or B == 2) and C == 3"
        );
        assert_eq!(round_trip("T | extend x = a - (b - c)"), "T\n| extend x = a - (b - c)");
        round_trip("T | extend x = -(a + 1), y = - 5, z = -(5)");
    }

    #[test]
    fn quoted_names_and_strings() {
        assert_eq!(
            round_trip("T | project ['Name with space'], ['kind'] | where x == 'it\\'s'"),
            "T\n| project ['Name with space'], ['kind']\n| where x == \"it's\""
        );
    }

    #[test]
    fn assorted_forms() {
        for q in [
            "let Threshold = 100;\nT | where Value > Threshold",
            "union T1, T2 | where Value > 50",
            "T | summarize Count = count() by ColName",
            "T | order by ColName asc nulls last, B desc",
            "T | extend NewValue = (subquery | summarize avg(Value))",
            "range x from 1 to 10 step 1 | summarize sum(x)",
            "T | where X between (1 .. 5) and Y !between (ago(1d) .. now())",
            "T | where A in ('a', 'b') and B !in~ (1) and C has_any (dynamic(['x']))",
            "T | mv-expand bagexpansion=array k = range(1, 3, 1) to typeof(long) limit 5",
            "T | mv-apply x = arr to typeof(long) on (summarize sum(x) | where sum_x > 1)",
            "T | top 10 by X desc | distinct * | count",
            "T | serialize | extend rn = row_number() | render timechart with (title = 'x')",
            "T | project-away A, B | project-rename C = D",
            "T | where d.a.b == 1 and d['k'] == 2 and d[0] == 3",
            "T | summarize by K",
            "T | where Name matches regex '^a.*'",
            "let v = T | where X > 1;\nv | join kind=leftouter (U) on K",
            "T | extend s = case(a > 1, 'x', 'y'), t = iff(isnotempty(b), 1.5, 2.0)",
            "T | union (U | take 1), V",
            "T | where x == -1.5 and y == 1e20 and z == 0x1F",
        ] {
            round_trip(q);
        }
    }
}
