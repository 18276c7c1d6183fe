//! Lossless tokenizer for the supported KQL subset.
//!
//! Every byte of the input ends up in exactly one token, including
//! whitespace and comments, so concatenating token texts reproduces the
//! source. Malformed input never aborts lexing; it yields a best-effort
//! token plus a syntax diagnostic.

use serde::Serialize;

use crate::diagnostic::{codes, Diagnostic};
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Identifier,
    /// `['name']` or `["name"]`
    QuotedIdentifier,
    StringLiteral,
    NumberLiteral,
    /// `datetime(...)`
    DateTimeLiteral,
    /// `1h`, `30m`, `timespan(...)`
    TimespanLiteral,
    /// `dynamic(...)`
    DynamicLiteral,
    Operator,
    Punctuation,
    Keyword,
    Comment,
    Whitespace,
    /// A character that starts no valid token.
    Unknown,
}

impl TokenKind {
    pub fn is_trivia(self) -> bool {
        matches!(self, TokenKind::Whitespace | TokenKind::Comment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub span: Span,
}

/// Reserved lowercase words. Recognition is case-sensitive.
pub const KEYWORDS: &[&str] = &[
    "where",
    "project",
    "project-away",
    "project-rename",
    "project-keep",
    "project-reorder",
    "extend",
    "summarize",
    "order",
    "sort",
    "by",
    "take",
    "limit",
    "distinct",
    "join",
    "kind",
    "on",
    "let",
    "union",
    "range",
    "from",
    "to",
    "step",
    "and",
    "or",
    "asc",
    "desc",
    "nulls",
    "first",
    "last",
    "between",
    "contains",
    "contains_cs",
    "has",
    "has_cs",
    "has_any",
    "has_all",
    "hasprefix",
    "hassuffix",
    "startswith",
    "startswith_cs",
    "endswith",
    "endswith_cs",
    "in",
    "matches",
    "regex",
    "mv-expand",
    "mv-apply",
    "serialize",
    "top",
    "render",
    "with",
    "typeof",
    "true",
    "false",
];

const HYPHENATED: &[&str] = &[
    "mv-expand",
    "mv-apply",
    "project-away",
    "project-rename",
    "project-keep",
    "project-reorder",
];

const TIMESPAN_SUFFIXES: &[&str] = &[
    "d",
    "day",
    "days",
    "h",
    "hr",
    "hrs",
    "hour",
    "hours",
    "m",
    "min",
    "minute",
    "minutes",
    "s",
    "sec",
    "second",
    "seconds",
    "ms",
    "milli",
    "millis",
    "millisecond",
    "milliseconds",
    "microsecond",
    "microseconds",
    "tick",
    "ticks",
];

const NEGATED_WORD_OPS: &[&str] = &[
    "in~",
    "in",
    "has",
    "has_cs",
    "contains",
    "contains_cs",
    "startswith",
    "startswith_cs",
    "endswith",
    "endswith_cs",
    "between",
    "hasprefix",
    "hassuffix",
];

const TWO_CHAR_OPS: &[&str] = &["==", "!=", "<=", ">=", "=~", "!~", "<>", ".."];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

pub fn is_timespan_suffix(word: &str) -> bool {
    TIMESPAN_SUFFIXES.contains(&word)
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<Token<'a>>,
    diagnostics: Vec<Diagnostic>,
}

/// Splits `text` into tokens. Never fails; problems are reported as
/// syntax diagnostics alongside a best-effort token stream.
pub fn tokenize(text: &str) -> (Vec<Token<'_>>, Vec<Diagnostic>) {
    let mut lexer = Lexer {
        src: text,
        pos: 0,
        tokens: Vec::new(),
        diagnostics: Vec::new(),
    };
    lexer.run();
    (lexer.tokens, lexer.diagnostics)
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek_char(&self, offset_chars: usize) -> Option<char> {
        self.rest().chars().nth(offset_chars)
    }

    fn push(&mut self, kind: TokenKind, len: usize) {
        let start = self.pos;
        let end = start + len;
        self.tokens.push(Token {
            kind,
            text: &self.src[start..end],
            span: Span::new(start, end),
        });
        self.pos = end;
    }

    fn run(&mut self) {
        while self.pos < self.src.len() {
            let c = self.peek_char(0).expect("pos inside input");
            if c.is_whitespace() {
                let len = self
                    .rest()
                    .char_indices()
                    .find(|(_, ch)| !ch.is_whitespace())
                    .map(|(i, _)| i)
                    .unwrap_or(self.rest().len());
                self.push(TokenKind::Whitespace, len);
            } else if self.rest().starts_with("//") {
                let len = self.rest().find('\n').unwrap_or(self.rest().len());
                let len = if self.rest()[..len].ends_with('\r') { len - 1 } else { len };
                self.push(TokenKind::Comment, len);
            } else if c == '\'' || c == '"' {
                let len = self.scan_string(0, true);
                self.push(TokenKind::StringLiteral, len);
            } else if (c == '@' || c == 'h' || c == 'H')
                && matches!(self.peek_char(1), Some('\'') | Some('"'))
            {
                let len = self.scan_string(1, c != '@');
                self.push(TokenKind::StringLiteral, len);
            } else if c == '[' && self.quoted_identifier_len().is_some() {
                let len = self.quoted_identifier_len().unwrap();
                self.push(TokenKind::QuotedIdentifier, len);
            } else if c.is_ascii_digit() {
                self.lex_number();
            } else if is_ident_start(c) {
                self.lex_word();
            } else if c == '!' {
                self.lex_bang();
            } else if let Some(op) = TWO_CHAR_OPS.iter().find(|op| self.rest().starts_with(**op)) {
                self.push(TokenKind::Operator, op.len());
            } else if "=<>+-*/%~".contains(c) {
                self.push(TokenKind::Operator, 1);
            } else if "|()[]{},;.:".contains(c) {
                self.push(TokenKind::Punctuation, 1);
            } else {
                let start = self.pos;
                self.push(TokenKind::Unknown, c.len_utf8());
                self.diagnostics.push(Diagnostic::syntax(
                    codes::UNEXPECTED_CHARACTER,
                    format!("unexpected character '{c}'"),
                    Span::new(start, self.pos),
                ));
            }
        }
    }

    /// Length of a string literal starting `prefix` bytes into the rest,
    /// including prefix and quotes. Emits a diagnostic when unterminated.
    fn scan_string(&mut self, prefix: usize, escapes: bool) -> usize {
        let rest = self.rest();
        let quote = rest[prefix..].chars().next().unwrap();
        let mut iter = rest[prefix + 1..].char_indices();
        while let Some((i, ch)) = iter.next() {
            if ch == '\\' && escapes {
                iter.next();
            } else if ch == quote {
                return prefix + 1 + i + 1;
            } else if ch == '\n' {
                let mut len = prefix + 1 + i;
                if rest[..len].ends_with('\r') {
                    len -= 1;
                }
                self.unterminated(len);
                return len;
            }
        }
        self.unterminated(rest.len());
        rest.len()
    }

    fn unterminated(&mut self, len: usize) {
        self.diagnostics.push(Diagnostic::syntax(
            codes::UNTERMINATED_STRING,
            "unterminated string literal",
            Span::new(self.pos, self.pos + len),
        ));
    }

    /// `[ 'name' ]` / `["name"]` with optional inner whitespace.
    fn quoted_identifier_len(&self) -> Option<usize> {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let mut i = 1;
        while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
            i += 1;
        }
        let quote = *bytes.get(i)?;
        if quote != b'\'' && quote != b'"' {
            return None;
        }
        i += 1;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'\n' => return None,
                b if b == quote => break,
                _ => i += 1,
            }
        }
        if i >= bytes.len() {
            return None;
        }
        i += 1;
        while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
            i += 1;
        }
        (bytes.get(i) == Some(&b']')).then_some(i + 1)
    }

    fn lex_number(&mut self) {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let mut i = 0;
        if rest.starts_with("0x") || rest.starts_with("0X") {
            i = 2;
            while i < bytes.len() && bytes[i].is_ascii_hexdigit() {
                i += 1;
            }
            self.push(TokenKind::NumberLiteral, i);
            return;
        }
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        // timespan suffix
        let mut j = i;
        while j < bytes.len() && (bytes[j] as char).is_ascii_alphabetic() {
            j += 1;
        }
        let suffix_ok = j > i
            && is_timespan_suffix(&rest[i..j])
            && !bytes.get(j).is_some_and(|b| is_ident_continue(*b as char));
        if suffix_ok {
            self.push(TokenKind::TimespanLiteral, j);
        } else {
            self.push(TokenKind::NumberLiteral, i);
        }
    }

    fn lex_word(&mut self) {
        let rest = self.rest();
        let len = rest
            .char_indices()
            .skip(1)
            .find(|(_, ch)| !is_ident_continue(*ch))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let word = &rest[..len];

        let literal_kind = match word {
            "datetime" => Some(TokenKind::DateTimeLiteral),
            "timespan" => Some(TokenKind::TimespanLiteral),
            "dynamic" => Some(TokenKind::DynamicLiteral),
            _ => None,
        };
        if let Some(kind) = literal_kind {
            if rest[len..].starts_with('(') {
                if let Some(close) = balanced_paren_end(&rest[len..]) {
                    self.push(kind, len + close);
                    return;
                }
            }
        }

        if rest[len..].starts_with('-') {
            if let Some(h) = HYPHENATED.iter().find(|h| {
                rest.starts_with(**h)
                    && !rest[h.len()..]
                        .chars()
                        .next()
                        .is_some_and(is_ident_continue)
            }) {
                self.push(TokenKind::Keyword, h.len());
                return;
            }
        }

        if word == "in" && rest[len..].starts_with('~') {
            self.push(TokenKind::Operator, 3);
            return;
        }

        let kind = if is_keyword(word) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.push(kind, len);
    }

    fn lex_bang(&mut self) {
        let rest = &self.rest()[1..];
        for op in NEGATED_WORD_OPS {
            if rest.starts_with(op)
                && !rest[op.len()..].chars().next().is_some_and(is_ident_continue)
            {
                self.push(TokenKind::Operator, 1 + op.len());
                return;
            }
        }
        if rest.starts_with('=') || rest.starts_with('~') {
            self.push(TokenKind::Operator, 2);
        } else {
            let start = self.pos;
            self.push(TokenKind::Unknown, 1);
            self.diagnostics.push(Diagnostic::syntax(
                codes::UNEXPECTED_CHARACTER,
                "unexpected character '!'",
                Span::new(start, start + 1),
            ));
        }
    }
}

/// Given text starting with `(`, returns the byte length through the
/// matching `)`, skipping quoted strings. `None` when unbalanced.
fn balanced_paren_end(text: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            } else if ch == '\n' {
                return None;
            }
            continue;
        }
        match ch {
            '\'' | '"' => quote = Some(ch),
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn significant(text: &str) -> Vec<(TokenKind, &str)> {
        tokenize(text)
            .0
            .into_iter()
            .filter(|t| !t.kind.is_trivia())
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn where_comparison_tokens() {
        use TokenKind::*;
        assert_eq!(
            significant("T | where Value > Threshold"),
            vec![
                (Identifier, "T"),
                (Punctuation, "|"),
                (Keyword, "where"),
                (Identifier, "Value"),
                (Operator, ">"),
                (Identifier, "Threshold"),
            ]
        );
    }

    #[test]
    fn empty_input() {
        let (tokens, diags) = tokenize("");
        assert!(tokens.is_empty());
        assert!(diags.is_empty());
    }

    #[test]
    fn unterminated_string_reports_once() {
        let (tokens, diags) = tokenize("\"unterminated");
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, codes::UNTERMINATED_STRING);
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].kind, TokenKind::StringLiteral);
    }

    #[test]
    fn literal_forms() {
        use TokenKind::*;
        assert_eq!(
            significant("datetime(2024-01-01 10:00) 1.5h 0m dynamic([1, \")\"]) 1..5"),
            vec![
                (DateTimeLiteral, "datetime(2024-01-01 10:00)"),
                (TimespanLiteral, "1.5h"),
                (TimespanLiteral, "0m"),
                (DynamicLiteral, "dynamic([1, \")\"])"),
                (NumberLiteral, "1"),
                (Operator, ".."),
                (NumberLiteral, "5"),
            ]
        );
    }

    #[test]
    fn word_operators() {
        use TokenKind::*;
        assert_eq!(
            significant("x in~ ('a') and y !in (1) and z !has 'q' | mv-expand k"),
            vec![
                (Identifier, "x"),
                (Operator, "in~"),
                (Punctuation, "("),
                (StringLiteral, "'a'"),
                (Punctuation, ")"),
                (Keyword, "and"),
                (Identifier, "y"),
                (Operator, "!in"),
                (Punctuation, "("),
                (NumberLiteral, "1"),
                (Punctuation, ")"),
                (Keyword, "and"),
                (Identifier, "z"),
                (Operator, "!has"),
                (StringLiteral, "'q'"),
                (Punctuation, "|"),
                (Keyword, "mv-expand"),
                (Identifier, "k"),
            ]
        );
    }

    #[test]
    fn quoted_identifier_and_left_prefix() {
        use TokenKind::*;
        assert_eq!(
            significant("['Name with space'] == $left.Key"),
            vec![
                (QuotedIdentifier, "['Name with space']"),
                (Operator, "=="),
                (Identifier, "$left"),
                (Punctuation, "."),
                (Identifier, "Key"),
            ]
        );
    }

    #[test]
    fn comments_are_kept() {
        let (tokens, _) = tokenize("// Data Retrieval\nTableName");
        assert_eq!(tokens[0].kind, TokenKind::Comment);
        assert_eq!(tokens[0].text, "// Data Retrieval");
    }

    #[test]
    fn unknown_character_diagnostic() {
        let (tokens, diags) = tokenize("T # x");
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, codes::UNEXPECTED_CHARACTER);
        assert!(tokens.iter().any(|t| t.kind == TokenKind::Unknown));
    }
}
