use std::fmt;

use serde::{Deserialize, Serialize};

use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Syntax,
    Semantic,
}

/// Stable diagnostic codes. These strings are part of the public contract:
/// repair rules and downstream tooling match on them, never on messages.
pub mod codes {
    // lexer
    pub const UNTERMINATED_STRING: &str = "unterminated-string";
    pub const UNEXPECTED_CHARACTER: &str = "unexpected-character";
    // parser
    pub const EMPTY_QUERY: &str = "empty-query";
    pub const UNEXPECTED_TOKEN: &str = "unexpected-token";
    pub const EXPECTED_TOKEN: &str = "expected-token";
    pub const EXPECTED_EXPRESSION: &str = "expected-expression";
    pub const UNKNOWN_OPERATOR: &str = "unknown-operator";
    pub const DANGLING_PIPE: &str = "dangling-pipe";
    pub const UNBALANCED_PARENS: &str = "unbalanced-parens";
    pub const BETWEEN_MISSING_PARENS: &str = "between-missing-parens";
    pub const BETWEEN_MISSING_RANGE: &str = "between-missing-range";
    pub const MISSING_EXTEND: &str = "missing-extend-operator";
    pub const INVALID_JOIN_KIND: &str = "invalid-join-kind";
    pub const MALFORMED_CASE: &str = "malformed-case";
    pub const INVALID_LITERAL: &str = "invalid-literal";
    // validator
    pub const UNKNOWN_TABLE: &str = "unknown-table";
    pub const TABLE_NOT_ACCESSIBLE: &str = "table-not-accessible";
    pub const UNKNOWN_COLUMN: &str = "unknown-column";
    pub const UNKNOWN_FUNCTION: &str = "unknown-function";
    pub const AGGREGATE_OUTSIDE_SUMMARIZE: &str = "aggregate-outside-summarize";
    pub const NESTED_AGGREGATE: &str = "nested-aggregate";
    pub const JOIN_NON_EQUALITY: &str = "join-non-equality";
    pub const DUPLICATE_LET: &str = "duplicate-let";

    /// Every code, syntax codes first.
    pub const ALL: &[&str] = &[
        UNTERMINATED_STRING,
        UNEXPECTED_CHARACTER,
        EMPTY_QUERY,
        UNEXPECTED_TOKEN,
        EXPECTED_TOKEN,
        EXPECTED_EXPRESSION,
        UNKNOWN_OPERATOR,
        DANGLING_PIPE,
        UNBALANCED_PARENS,
        BETWEEN_MISSING_PARENS,
        BETWEEN_MISSING_RANGE,
        MISSING_EXTEND,
        INVALID_JOIN_KIND,
        MALFORMED_CASE,
        INVALID_LITERAL,
        UNKNOWN_TABLE,
        TABLE_NOT_ACCESSIBLE,
        UNKNOWN_COLUMN,
        UNKNOWN_FUNCTION,
        AGGREGATE_OUTSIDE_SUMMARIZE,
        NESTED_AGGREGATE,
        JOIN_NON_EQUALITY,
        DUPLICATE_LET,
    ];
}

/// A name that was legal at the position of an unresolved identifier.
/// `table` is the physical table the column came from, when known.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScopeEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub span: Span,
    /// The unresolved table or column for identifier diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related: Option<String>,
    /// Names legal at the diagnostic position (identifier diagnostics only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scope: Vec<ScopeEntry>,
}

impl Diagnostic {
    pub fn syntax(code: &str, message: impl Into<String>, span: Span) -> Self {
        Diagnostic {
            severity: Severity::Syntax,
            code: code.to_string(),
            message: message.into(),
            span,
            related: None,
            scope: Vec::new(),
        }
    }

    pub fn semantic(code: &str, message: impl Into<String>, span: Span) -> Self {
        Diagnostic {
            severity: Severity::Semantic,
            code: code.to_string(),
            message: message.into(),
            span,
            related: None,
            scope: Vec::new(),
        }
    }

    pub fn with_related(mut self, name: impl Into<String>) -> Self {
        self.related = Some(name.into());
        self
    }

    pub fn with_scope(mut self, scope: Vec<ScopeEntry>) -> Self {
        self.scope = scope;
        self
    }

    pub fn is_syntax(&self) -> bool {
        self.severity == Severity::Syntax
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Syntax => "syntax",
            Severity::Semantic => "semantic",
        };
        write!(
            f,
            "{sev} error [{}] at {}..{}: {}",
            self.code, self.span.start, self.span.end, self.message
        )
    }
}

/// True when none of the diagnostics is a syntax error.
pub fn is_syntactically_correct(diags: &[Diagnostic]) -> bool {
    diags.iter().all(|d| !d.is_syntax())
}

/// True when there are no diagnostics at all.
pub fn is_semantically_correct(diags: &[Diagnostic]) -> bool {
    diags.is_empty()
}
