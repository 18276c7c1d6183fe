//! Recursive-descent parser with error recovery.
//!
//! The parser always produces as much of a [`Query`] as it can. Problems
//! become syntax diagnostics; unrecognised stages are kept verbatim as
//! [`Stage::Invalid`] so the rest of the pipeline is still available.

use crate::ast::*;
use crate::diagnostic::{codes, Diagnostic};
use crate::lexer::{tokenize, Token, TokenKind};
use crate::span::Span;

/// Keywords that may still be used as names in expression position.
const SOFT_KEYWORDS: &[&str] = &[
    "kind", "from", "to", "step", "first", "last", "nulls", "with", "regex", "range", "typeof",
    "asc", "desc",
];

#[derive(Debug, Clone)]
pub struct Parsed {
    pub query: Option<Query>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Parsed {
    pub fn has_syntax_errors(&self) -> bool {
        self.diagnostics.iter().any(|d| d.is_syntax())
    }
}

/// Parses `text` into a query. Never fails outright.
pub fn parse(text: &str) -> Parsed {
    let (tokens, mut diagnostics) = tokenize(text);
    let tokens: Vec<Token<'_>> = tokens
        .into_iter()
        .filter(|t| !t.kind.is_trivia() && t.kind != TokenKind::Unknown)
        .collect();
    let mut parser = Parser {
        src: text,
        tokens,
        pos: 0,
        diags: Vec::new(),
    };
    let query = parser.parse_script();
    diagnostics.append(&mut parser.diags);
    diagnostics.sort_by_key(|d| (d.span.start, d.span.end));
    Parsed { query, diagnostics }
}

enum QueryOrExpr {
    Query(Query),
    Expr(Expr),
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token<'a>>,
    pos: usize,
    diags: Vec<Diagnostic>,
}

impl<'a> Parser<'a> {
    // ---- token helpers ----

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token<'a>> {
        self.tokens.get(self.pos + n)
    }

    fn at_eof(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == TokenKind::Punctuation && t.text == p)
    }

    fn at_keyword(&self, k: &str) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == TokenKind::Keyword && t.text == k)
    }

    fn at_op(&self, o: &str) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == TokenKind::Operator && t.text == o)
    }

    fn nth_is_op(&self, n: usize, o: &str) -> bool {
        self.peek_at(n)
            .is_some_and(|t| t.kind == TokenKind::Operator && t.text == o)
    }

    fn bump(&mut self) -> Token<'a> {
        let t = self.tokens[self.pos];
        self.pos += 1;
        t
    }

    fn here(&self) -> Span {
        match self.peek() {
            Some(t) => t.span,
            None => Span::new(self.src.len(), self.src.len()),
        }
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(t) => format!("'{}'", t.text),
            None => "end of input".to_string(),
        }
    }

    fn error(&mut self, code: &str, message: impl Into<String>, span: Span) {
        self.diags.push(Diagnostic::syntax(code, message, span));
    }

    fn expect_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.bump();
            true
        } else {
            let code = if p == ")" {
                codes::UNBALANCED_PARENS
            } else {
                codes::EXPECTED_TOKEN
            };
            let msg = format!("expected '{p}', found {}", self.found());
            let span = self.here();
            self.error(code, msg, span);
            false
        }
    }

    fn expect_keyword(&mut self, k: &str) -> bool {
        if self.at_keyword(k) {
            self.bump();
            true
        } else {
            let msg = format!("expected '{k}', found {}", self.found());
            let span = self.here();
            self.error(codes::EXPECTED_TOKEN, msg, span);
            false
        }
    }

    /// Accepts an identifier, quoted identifier, or soft keyword as a name.
    fn parse_name(&mut self) -> Option<Ident> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let t = self.bump();
                Some(Ident::at(t.text, t.span))
            }
            Some(t) if t.kind == TokenKind::QuotedIdentifier => {
                let t = self.bump();
                Some(Ident::at(decode_quoted_identifier(t.text), t.span))
            }
            Some(t) if t.kind == TokenKind::Keyword && SOFT_KEYWORDS.contains(&t.text) => {
                let t = self.bump();
                Some(Ident::at(t.text, t.span))
            }
            _ => None,
        }
    }

    fn expect_name(&mut self, what: &str) -> Ident {
        match self.parse_name() {
            Some(id) => id,
            None => {
                let msg = format!("expected {what}, found {}", self.found());
                let span = self.here();
                self.error(codes::EXPECTED_TOKEN, msg, span);
                Ident::at("", span)
            }
        }
    }

    /// True when the next tokens are `name =` (single `=`, not `==`).
    fn at_assignment(&self) -> bool {
        let name_like = self.peek().is_some_and(|t| {
            matches!(t.kind, TokenKind::Identifier | TokenKind::QuotedIdentifier)
                || (t.kind == TokenKind::Keyword && SOFT_KEYWORDS.contains(&t.text))
        });
        name_like && self.nth_is_op(1, "=")
    }

    /// Skips to the end of the current stage: a depth-0 `|`, `;`, `)` or
    /// end of input. Returns the skipped source text.
    fn skip_stage(&mut self) -> String {
        let start = self.here().start;
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Punctuation {
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            break;
                        }
                        depth -= 1;
                    }
                    "|" | ";" if depth == 0 => break,
                    _ => {}
                }
            }
            self.bump();
        }
        let end = self.prev_end().max(start);
        self.src[start..end].to_string()
    }

    // ---- script / query ----

    fn parse_script(&mut self) -> Option<Query> {
        let mut lets = Vec::new();
        while self.at_keyword("let") {
            lets.push(self.parse_let());
            if !self.expect_punct(";") {
                self.skip_stage();
                if self.at_punct(";") {
                    self.bump();
                }
            }
        }
        while self.at_punct(";") {
            self.bump();
        }
        if self.at_eof() {
            let span = Span::new(0, self.src.len());
            self.error(codes::EMPTY_QUERY, "no tabular expression to evaluate", span);
            return None;
        }
        let mut query = self.parse_query_body();
        query.lets = lets;
        while self.at_punct(";") {
            self.bump();
        }
        while !self.at_eof() {
            let t = *self.peek().unwrap();
            if t.kind == TokenKind::Punctuation && matches!(t.text, ")" | "]" | "}") {
                self.error(codes::UNBALANCED_PARENS, format!("unmatched '{}'", t.text), t.span);
                self.bump();
            } else {
                self.error(
                    codes::UNEXPECTED_TOKEN,
                    format!("unexpected '{}' after end of query", t.text),
                    t.span,
                );
                self.skip_stage();
                if self.at_punct("|") || self.at_punct(";") {
                    self.bump();
                }
            }
        }
        Some(query)
    }

    fn parse_let(&mut self) -> LetBinding {
        self.bump(); // let
        let name = self.expect_name("a let name");
        if self.at_op("=") {
            self.bump();
        } else {
            let msg = format!("expected '=', found {}", self.found());
            let span = self.here();
            self.error(codes::EXPECTED_TOKEN, msg, span);
        }
        let value = match self.parse_query_or_expr() {
            QueryOrExpr::Query(q) => LetValue::Tabular(q),
            QueryOrExpr::Expr(Expr::Call { name: f, mut args })
                if f.name == "materialize"
                    && args.len() == 1
                    && matches!(args[0], Expr::Subquery(_)) =>
            {
                match args.pop() {
                    Some(Expr::Subquery(q)) => LetValue::Tabular(*q),
                    _ => unreachable!(),
                }
            }
            QueryOrExpr::Expr(e) => LetValue::Scalar(e),
        };
        LetBinding { name, value }
    }

    fn parse_query_body(&mut self) -> Query {
        let source = self.parse_source();
        let stages = self.parse_stages();
        Query {
            lets: Vec::new(),
            source,
            stages,
        }
    }

    fn parse_stages(&mut self) -> Vec<Stage> {
        let mut stages = Vec::new();
        while self.at_punct("|") {
            let pipe = self.bump();
            if self.at_eof() || self.at_punct(")") || self.at_punct("|") || self.at_punct(";") {
                self.error(codes::DANGLING_PIPE, "pipe is not followed by an operator", pipe.span);
                continue;
            }
            if let Some(stage) = self.parse_stage() {
                stages.push(stage);
            }
            self.finish_stage(&mut stages);
        }
        stages
    }

    fn finish_stage(&mut self, stages: &mut Vec<Stage>) {
        if self.at_eof() || self.at_punct("|") || self.at_punct(")") || self.at_punct(";") {
            return;
        }
        let t = *self.peek().unwrap();
        self.error(
            codes::UNEXPECTED_TOKEN,
            format!("unexpected '{}' in stage", t.text),
            t.span,
        );
        let skipped = self.skip_stage();
        if let Some(Stage::Invalid(text)) = stages.last_mut() {
            text.push(' ');
            text.push_str(&skipped);
        }
    }

    fn parse_source(&mut self) -> Source {
        if self.at_keyword("union") {
            self.bump();
            return Source::Union(self.parse_union_items());
        }
        if self.at_keyword("range") {
            return self.parse_range_source();
        }
        if self.at_punct("(") {
            self.bump();
            let q = self.parse_query_body();
            self.expect_punct(")");
            return Source::Subquery(Box::new(q));
        }
        match self.parse_name() {
            Some(id) => Source::Table(id),
            None => {
                let msg = format!("expected a table name, found {}", self.found());
                let span = self.here();
                self.error(codes::EXPECTED_EXPRESSION, msg, span);
                if !self.at_punct("|") {
                    self.skip_stage();
                }
                Source::Table(Ident::at("", span))
            }
        }
    }

    fn parse_range_source(&mut self) -> Source {
        self.bump(); // range
        let column = self.expect_name("a range column name");
        self.expect_keyword("from");
        let from = self.parse_expr();
        self.expect_keyword("to");
        let to = self.parse_expr();
        self.expect_keyword("step");
        let step = self.parse_expr();
        Source::Range {
            column,
            from,
            to,
            step,
        }
    }

    fn parse_union_items(&mut self) -> Vec<Source> {
        // union parameters such as kind=outer or withsource=T are accepted and dropped
        while self.at_assignment()
            && self
                .peek()
                .is_some_and(|t| matches!(t.text, "kind" | "withsource" | "isfuzzy"))
        {
            self.bump();
            self.bump();
            self.bump();
        }
        let mut items = Vec::new();
        loop {
            if self.at_punct("(") {
                self.bump();
                let q = self.parse_query_body();
                self.expect_punct(")");
                items.push(Source::Subquery(Box::new(q)));
            } else {
                let id = self.expect_name("a table name");
                items.push(Source::Table(id));
            }
            if self.at_punct(",") {
                self.bump();
            } else {
                break;
            }
        }
        items
    }

    // ---- stages ----

    fn parse_stage(&mut self) -> Option<Stage> {
        let t = *self.peek()?;
        let word = match t.kind {
            TokenKind::Keyword | TokenKind::Identifier => t.text,
            _ => "",
        };
        let is_call = self
            .peek_at(1)
            .is_some_and(|n| n.kind == TokenKind::Punctuation && n.text == "(");
        match word {
            "where" | "filter" => {
                self.bump();
                Some(Stage::Where(self.parse_expr()))
            }
            "project" => {
                self.bump();
                Some(Stage::Project(self.parse_named_list()))
            }
            "project-away" => {
                self.bump();
                Some(Stage::ProjectAway(self.parse_name_list()))
            }
            "project-rename" => {
                self.bump();
                let mut pairs = Vec::new();
                loop {
                    let new = self.expect_name("a column name");
                    if self.at_op("=") {
                        self.bump();
                    } else {
                        let msg = format!("expected '=', found {}", self.found());
                        let span = self.here();
                        self.error(codes::EXPECTED_TOKEN, msg, span);
                    }
                    let old = self.expect_name("a column name");
                    pairs.push((new, old));
                    if self.at_punct(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
                Some(Stage::ProjectRename(pairs))
            }
            "extend" => {
                self.bump();
                Some(Stage::Extend(self.parse_named_list()))
            }
            "summarize" => {
                self.bump();
                self.skip_hints();
                let aggregates = if self.at_keyword("by") {
                    Vec::new()
                } else {
                    self.parse_named_list()
                };
                let by = if self.at_keyword("by") {
                    self.bump();
                    self.parse_named_list()
                } else {
                    Vec::new()
                };
                Some(Stage::Summarize { aggregates, by })
            }
            "order" | "sort" => {
                self.bump();
                self.expect_keyword("by");
                let mut keys = vec![self.parse_sort_key()];
                while self.at_punct(",") {
                    self.bump();
                    keys.push(self.parse_sort_key());
                }
                Some(Stage::Order(keys))
            }
            "take" | "limit" => {
                self.bump();
                Some(Stage::Take(self.parse_expr()))
            }
            "top" => {
                self.bump();
                let count = self.parse_expr();
                self.expect_keyword("by");
                let key = self.parse_sort_key();
                Some(Stage::Top { count, key })
            }
            "distinct" => {
                self.bump();
                if self.at_op("*") {
                    self.bump();
                    Some(Stage::Distinct(Vec::new()))
                } else {
                    let mut cols = vec![self.parse_expr()];
                    while self.at_punct(",") {
                        self.bump();
                        cols.push(self.parse_expr());
                    }
                    Some(Stage::Distinct(cols))
                }
            }
            "count" if !is_call => {
                self.bump();
                Some(Stage::Count)
            }
            "join" => Some(self.parse_join()),
            "union" => {
                self.bump();
                Some(Stage::Union(self.parse_union_items()))
            }
            "mv-expand" => {
                self.bump();
                let mut bag_expansion = None;
                if self.at_assignment() && self.peek().is_some_and(|t| t.text == "bagexpansion") {
                    self.bump();
                    self.bump();
                    bag_expansion = Some(self.expect_name("bag or array").name);
                }
                let items = self.parse_mv_items();
                let limit = if self.at_keyword("limit") {
                    self.bump();
                    Some(self.parse_expr())
                } else {
                    None
                };
                Some(Stage::MvExpand {
                    bag_expansion,
                    items,
                    limit,
                })
            }
            "mv-apply" => {
                self.bump();
                let items = self.parse_mv_items();
                self.expect_keyword("on");
                let mut stages = Vec::new();
                if self.expect_punct("(") {
                    if let Some(s) = self.parse_stage() {
                        stages.push(s);
                    }
                    self.finish_stage(&mut stages);
                    stages.extend(self.parse_stages());
                    self.expect_punct(")");
                }
                Some(Stage::MvApply { items, stages })
            }
            "serialize" => {
                self.bump();
                let items = if self.at_eof() || self.at_punct("|") || self.at_punct(")") {
                    Vec::new()
                } else {
                    self.parse_named_list()
                };
                Some(Stage::Serialize(items))
            }
            "render" => {
                self.bump();
                let visualization = self.expect_name("a visualization");
                let mut properties = Vec::new();
                if self.at_keyword("with") {
                    self.bump();
                    if self.expect_punct("(") {
                        while !self.at_punct(")") && !self.at_eof() {
                            let name = self.expect_name("a property name");
                            if self.at_op("=") {
                                self.bump();
                            }
                            let value = self.parse_expr();
                            properties.push((name, value));
                            if self.at_punct(",") {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                        self.expect_punct(")");
                    }
                }
                Some(Stage::Render {
                    visualization,
                    properties,
                })
            }
            _ if self.at_assignment() => {
                let start = t.span;
                let items = self.parse_named_list();
                let span = start.to(Span::new(start.start, self.prev_end()));
                self.error(
                    codes::MISSING_EXTEND,
                    "column assignment outside of extend, project or summarize",
                    span,
                );
                Some(Stage::Assignment(items))
            }
            _ => {
                let span = t.span;
                let text = self.skip_stage();
                self.error(
                    codes::UNKNOWN_OPERATOR,
                    format!("unknown or unsupported operator '{}'", t.text),
                    span,
                );
                Some(Stage::Invalid(text))
            }
        }
    }

    /// Drops `hint.x = y` query hints.
    fn skip_hints(&mut self) {
        while self
            .peek()
            .is_some_and(|t| t.kind == TokenKind::Identifier && t.text == "hint")
            && self.peek_at(1).is_some_and(|t| t.text == ".")
        {
            self.bump();
            self.bump();
            self.parse_name();
            if self.at_op("=") {
                self.bump();
                self.parse_primary();
            }
        }
    }

    fn parse_join(&mut self) -> Stage {
        self.bump(); // join
        let mut kind = JoinKind::InnerUnique;
        loop {
            if self.at_keyword("kind") && self.nth_is_op(1, "=") {
                self.bump();
                self.bump();
                match self.parse_name() {
                    Some(id) => match JoinKind::parse(&id.name) {
                        Some(k) => kind = k,
                        None => self.error(
                            codes::INVALID_JOIN_KIND,
                            format!("unknown join kind '{}'", id.name),
                            id.span,
                        ),
                    },
                    None => {
                        let span = self.here();
                        self.error(codes::INVALID_JOIN_KIND, "expected a join kind", span);
                    }
                }
            } else if self
                .peek()
                .is_some_and(|t| t.kind == TokenKind::Identifier && t.text == "hint")
            {
                self.skip_hints();
            } else {
                break;
            }
        }
        let right = if self.at_punct("(") {
            self.bump();
            let q = self.parse_query_body();
            self.expect_punct(")");
            q
        } else {
            let id = self.expect_name("a table or subquery");
            Query {
                lets: Vec::new(),
                source: Source::Table(id),
                stages: Vec::new(),
            }
        };
        let mut on = Vec::new();
        if self.expect_keyword("on") {
            on.push(self.parse_expr());
            while self.at_punct(",") {
                self.bump();
                on.push(self.parse_expr());
            }
        }
        Stage::Join {
            kind,
            right: Box::new(right),
            on,
        }
    }

    fn parse_mv_items(&mut self) -> Vec<MvExpandItem> {
        let mut items = Vec::new();
        loop {
            let name = if self.at_assignment() {
                let n = self.parse_name();
                self.bump();
                n
            } else {
                None
            };
            let expr = self.parse_expr();
            let to_type = if self.at_keyword("to") {
                self.bump();
                self.expect_keyword("typeof");
                self.expect_punct("(");
                let ty = self.expect_name("a type name").name;
                self.expect_punct(")");
                Some(ty)
            } else {
                None
            };
            items.push(MvExpandItem {
                name,
                expr,
                to_type,
            });
            if self.at_punct(",") {
                self.bump();
            } else {
                break;
            }
        }
        items
    }

    fn parse_sort_key(&mut self) -> SortKey {
        let expr = self.parse_expr();
        let order = if self.at_keyword("asc") {
            self.bump();
            Some(SortOrder::Asc)
        } else if self.at_keyword("desc") {
            self.bump();
            Some(SortOrder::Desc)
        } else {
            None
        };
        let nulls = if self.at_keyword("nulls") {
            self.bump();
            if self.at_keyword("first") {
                self.bump();
                Some(NullsPosition::First)
            } else if self.at_keyword("last") {
                self.bump();
                Some(NullsPosition::Last)
            } else {
                let span = self.here();
                self.error(codes::EXPECTED_TOKEN, "expected 'first' or 'last'", span);
                None
            }
        } else {
            None
        };
        SortKey { expr, order, nulls }
    }

    fn parse_name_list(&mut self) -> Vec<Ident> {
        let mut names = vec![self.expect_name("a column name")];
        while self.at_punct(",") {
            self.bump();
            names.push(self.expect_name("a column name"));
        }
        names
    }

    fn parse_named_item(&mut self) -> NamedExpr {
        if self.at_assignment() {
            let name = self.parse_name();
            self.bump(); // =
            NamedExpr {
                name,
                expr: self.parse_expr(),
            }
        } else {
            NamedExpr::unnamed(self.parse_expr())
        }
    }

    fn parse_named_list(&mut self) -> Vec<NamedExpr> {
        let mut items = vec![self.parse_named_item()];
        while self.at_punct(",") {
            self.bump();
            items.push(self.parse_named_item());
        }
        items
    }

    // ---- expressions ----

    fn parse_query_or_expr(&mut self) -> QueryOrExpr {
        let starts_query = self.at_keyword("union")
            || (self.at_keyword("range")
                && self
                    .peek_at(1)
                    .is_some_and(|t| t.kind != TokenKind::Punctuation));
        if starts_query {
            return QueryOrExpr::Query(self.parse_query_body());
        }
        let expr = self.parse_expr();
        if self.at_punct("|") {
            let source = match expr {
                Expr::Column(id) => Source::Table(id),
                Expr::Subquery(q) => Source::Subquery(q),
                other => return QueryOrExpr::Expr(other),
            };
            let stages = self.parse_stages();
            return QueryOrExpr::Query(Query {
                lets: Vec::new(),
                source,
                stages,
            });
        }
        QueryOrExpr::Expr(expr)
    }

    pub(crate) fn parse_expr(&mut self) -> Expr {
        self.parse_or()
    }

    fn parse_or(&mut self) -> Expr {
        let mut left = self.parse_and();
        while self.at_keyword("or") {
            self.bump();
            let right = self.parse_and();
            left = Expr::binary(BinaryOp::Or, left, right);
        }
        left
    }

    fn parse_and(&mut self) -> Expr {
        let mut left = self.parse_compare();
        while self.at_keyword("and") {
            self.bump();
            let right = self.parse_compare();
            left = Expr::binary(BinaryOp::And, left, right);
        }
        left
    }

    fn parse_compare(&mut self) -> Expr {
        let mut left = self.parse_additive();
        loop {
            let Some(t) = self.peek().copied() else {
                break;
            };
            if !matches!(t.kind, TokenKind::Operator | TokenKind::Keyword) {
                break;
            }
            if t.text == "between" || t.text == "!between" {
                self.bump();
                left = self.parse_between(left, t);
                continue;
            }
            if let Some(op) = ListOp::from_token(t.text) {
                self.bump();
                let items = self.parse_list_items();
                left = Expr::InList {
                    op,
                    left: Box::new(left),
                    items,
                };
                continue;
            }
            if t.text == "matches" {
                self.bump();
                self.expect_keyword("regex");
                let right = self.parse_additive();
                left = Expr::binary(BinaryOp::MatchesRegex, left, right);
                continue;
            }
            match BinaryOp::from_token(t.text) {
                Some(op) if op.is_comparison() => {
                    self.bump();
                    let right = self.parse_additive();
                    left = Expr::binary(op, left, right);
                }
                _ => break,
            }
        }
        left
    }

    fn parse_between(&mut self, expr: Expr, op_token: Token<'a>) -> Expr {
        let negated = op_token.text.starts_with('!');
        let (low, high) = if self.at_punct("(") {
            self.bump();
            let low = self.parse_additive();
            let high = if self.at_op("..") {
                self.bump();
                self.parse_additive()
            } else {
                let span = op_token.span.to(self.here());
                self.error(
                    codes::BETWEEN_MISSING_RANGE,
                    "between requires a 'low .. high' range",
                    span,
                );
                low.clone()
            };
            self.expect_punct(")");
            (low, high)
        } else {
            let low = self.parse_additive();
            if self.at_op("..") {
                self.bump();
                let high = self.parse_additive();
                let span = Span::new(op_token.span.start, self.prev_end());
                self.error(
                    codes::BETWEEN_MISSING_PARENS,
                    "between range must be enclosed in parentheses",
                    span,
                );
                (low, high)
            } else {
                let span = Span::new(op_token.span.start, self.prev_end());
                self.error(
                    codes::BETWEEN_MISSING_RANGE,
                    "between requires a 'low .. high' range",
                    span,
                );
                (low.clone(), low)
            }
        };
        Expr::Between {
            expr: Box::new(expr),
            low: Box::new(low),
            high: Box::new(high),
            negated,
        }
    }

    fn parse_list_items(&mut self) -> Vec<Expr> {
        if !self.at_punct("(") {
            return vec![self.parse_additive()];
        }
        self.bump();
        let mut items = Vec::new();
        if !self.at_punct(")") {
            loop {
                items.push(self.parse_arg());
                if self.at_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")");
        items
    }

    fn parse_arg(&mut self) -> Expr {
        if self.at_op("*")
            && self
                .peek_at(1)
                .is_some_and(|t| t.text == ")" || t.text == ",")
        {
            self.bump();
            return Expr::Star;
        }
        match self.parse_query_or_expr() {
            QueryOrExpr::Query(q) => Expr::Subquery(Box::new(q)),
            QueryOrExpr::Expr(e) => e,
        }
    }

    fn parse_additive(&mut self) -> Expr {
        let mut left = self.parse_mul();
        loop {
            let op = if self.at_op("+") {
                BinaryOp::Add
            } else if self.at_op("-") {
                BinaryOp::Sub
            } else {
                break;
            };
            self.bump();
            let right = self.parse_mul();
            left = Expr::binary(op, left, right);
        }
        left
    }

    fn parse_mul(&mut self) -> Expr {
        let mut left = self.parse_unary();
        loop {
            let op = if self.at_op("*") {
                BinaryOp::Mul
            } else if self.at_op("/") {
                BinaryOp::Div
            } else if self.at_op("%") {
                BinaryOp::Mod
            } else {
                break;
            };
            self.bump();
            let right = self.parse_unary();
            left = Expr::binary(op, left, right);
        }
        left
    }

    fn parse_unary(&mut self) -> Expr {
        if self.at_op("-") || self.at_op("+") {
            let neg = self.at_op("-");
            self.bump();
            // `-` directly followed by a number is a negative literal
            if neg {
                if let Some(t) = self.peek().copied() {
                    if t.kind == TokenKind::NumberLiteral {
                        self.bump();
                        let lit = match parse_number(t.text) {
                            Some(Literal::Long(v)) => Literal::Long(-v),
                            Some(Literal::Real(_)) if t.text == "9223372036854775808" => {
                                Literal::Long(i64::MIN)
                            }
                            Some(Literal::Real(v)) => Literal::Real(-v),
                            _ => {
                                self.error(
                                    codes::INVALID_LITERAL,
                                    format!("invalid number '{}'", t.text),
                                    t.span,
                                );
                                Literal::Long(0)
                            }
                        };
                        return self.parse_postfix_from(Expr::Literal(lit));
                    }
                }
            }
            let operand = self.parse_unary();
            return Expr::Unary {
                op: if neg { UnaryOp::Neg } else { UnaryOp::Plus },
                operand: Box::new(operand),
            };
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Expr {
        let base = self.parse_primary();
        self.parse_postfix_from(base)
    }

    fn parse_postfix_from(&mut self, mut base: Expr) -> Expr {
        loop {
            if self.at_punct(".") {
                self.bump();
                let key = match self.peek() {
                    Some(t)
                        if matches!(
                            t.kind,
                            TokenKind::Identifier | TokenKind::Keyword | TokenKind::QuotedIdentifier
                        ) =>
                    {
                        let t = self.bump();
                        if t.kind == TokenKind::QuotedIdentifier {
                            decode_quoted_identifier(t.text)
                        } else {
                            t.text.to_string()
                        }
                    }
                    _ => {
                        let msg = format!("expected a property name, found {}", self.found());
                        let span = self.here();
                        self.error(codes::EXPECTED_TOKEN, msg, span);
                        String::new()
                    }
                };
                base = Expr::Property {
                    base: Box::new(base),
                    key: PropertyKey::Name(key),
                };
            } else if self.at_punct("[") {
                self.bump();
                let idx = self.parse_expr();
                self.expect_punct("]");
                base = Expr::Property {
                    base: Box::new(base),
                    key: PropertyKey::Index(Box::new(idx)),
                };
            } else {
                break;
            }
        }
        base
    }

    fn parse_primary(&mut self) -> Expr {
        let Some(t) = self.peek().copied() else {
            let span = self.here();
            self.error(codes::EXPECTED_EXPRESSION, "expected an expression, found end of input", span);
            return Expr::Column(Ident::at("", span));
        };
        match t.kind {
            TokenKind::NumberLiteral => {
                self.bump();
                match parse_number(t.text) {
                    Some(lit) => Expr::Literal(lit),
                    None => {
                        self.error(codes::INVALID_LITERAL, format!("invalid number '{}'", t.text), t.span);
                        Expr::Literal(Literal::Long(0))
                    }
                }
            }
            TokenKind::StringLiteral => {
                self.bump();
                Expr::Literal(Literal::String(decode_string(t.text)))
            }
            TokenKind::DateTimeLiteral => {
                self.bump();
                Expr::Literal(Literal::DateTime(t.text.to_string()))
            }
            TokenKind::TimespanLiteral => {
                self.bump();
                Expr::Literal(Literal::Timespan(t.text.to_string()))
            }
            TokenKind::DynamicLiteral => {
                self.bump();
                Expr::Literal(Literal::Dynamic(t.text.to_string()))
            }
            TokenKind::Keyword if t.text == "true" || t.text == "false" => {
                self.bump();
                Expr::Literal(Literal::Bool(t.text == "true"))
            }
            TokenKind::Punctuation if t.text == "(" => {
                self.bump();
                let inner = self.parse_query_or_expr();
                self.expect_punct(")");
                match inner {
                    QueryOrExpr::Query(q) => Expr::Subquery(Box::new(q)),
                    QueryOrExpr::Expr(e) => e,
                }
            }
            TokenKind::Operator if t.text == "*" => {
                self.bump();
                Expr::Star
            }
            _ => {
                let callable = self
                    .peek_at(1)
                    .is_some_and(|n| n.kind == TokenKind::Punctuation && n.text == "(")
                    && matches!(t.kind, TokenKind::Identifier | TokenKind::Keyword);
                if callable && (t.kind == TokenKind::Identifier || SOFT_KEYWORDS.contains(&t.text)) {
                    self.bump();
                    let name = Ident::at(t.text, t.span);
                    let args = self.parse_list_items();
                    return self.make_call(name, args);
                }
                match self.parse_name() {
                    Some(id) => Expr::Column(id),
                    None => {
                        self.error(
                            codes::EXPECTED_EXPRESSION,
                            format!("expected an expression, found '{}'", t.text),
                            t.span,
                        );
                        // consume the offending token unless it closes a construct
                        if !(t.kind == TokenKind::Punctuation && matches!(t.text, ")" | "|" | "," | ";" | "]"))
                        {
                            self.bump();
                        }
                        Expr::Column(Ident::at("", t.span))
                    }
                }
            }
        }
    }

    fn make_call(&mut self, name: Ident, mut args: Vec<Expr>) -> Expr {
        if name.name == "case" {
            if args.len() >= 3 && args.len() % 2 == 1 {
                let default = args.pop().unwrap();
                let mut branches = Vec::new();
                let mut iter = args.into_iter();
                while let (Some(c), Some(v)) = (iter.next(), iter.next()) {
                    branches.push((c, v));
                }
                return Expr::Case {
                    branches,
                    default: Box::new(default),
                };
            }
            self.error(
                codes::MALFORMED_CASE,
                "case() needs condition/value pairs followed by a default value",
                name.span,
            );
        }
        Expr::Call { name, args }
    }
}

fn parse_number(text: &str) -> Option<Literal> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        return i64::from_str_radix(hex, 16).ok().map(Literal::Long);
    }
    if text.contains(['.', 'e', 'E']) {
        return text.parse::<f64>().ok().map(Literal::Real);
    }
    match text.parse::<i64>() {
        Ok(v) => Some(Literal::Long(v)),
        Err(_) => text.parse::<f64>().ok().map(Literal::Real),
    }
}

/// Decodes a string literal token (with quotes and optional `@`/`h` prefix).
pub fn decode_string(text: &str) -> String {
    let (verbatim, body) = match text.chars().next() {
        Some('@') => (true, &text[1..]),
        Some('h') | Some('H') => (false, &text[1..]),
        _ => (false, text),
    };
    let quote = body.chars().next().unwrap_or('"');
    let inner = &body[quote.len_utf8().min(body.len())..];
    let inner = inner.strip_suffix(quote).unwrap_or(inner);
    if verbatim {
        return inner.to_string();
    }
    unescape(inner)
}

fn unescape(inner: &str) -> String {
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('0') => out.push('\0'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Decodes `['name']` to `name`.
pub fn decode_quoted_identifier(text: &str) -> String {
    let inner = text.trim_start_matches('[').trim_end_matches(']').trim();
    let quote = inner.chars().next().unwrap_or('\'');
    let inner = inner.strip_prefix(quote).unwrap_or(inner);
    let inner = inner.strip_suffix(quote).unwrap_or(inner);
    unescape(inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(text: &str) -> Query {
        let parsed = parse(text);
        assert!(
            parsed.diagnostics.is_empty(),
            "unexpected diagnostics for {text:?}: {:#?}",
            parsed.diagnostics
        );
        parsed.query.unwrap()
    }

    fn codes_of(text: &str) -> Vec<String> {
        parse(text).diagnostics.into_iter().map(|d| d.code).collect()
    }

    #[test]
    fn take_stage() {
        let q = ok("TableName | take 100");
        assert_eq!(q.source, Source::Table(Ident::new("TableName")));
        assert_eq!(q.stages, vec![Stage::Take(Expr::long(100))]);
    }

    #[test]
    fn let_binding_then_query() {
        let q = ok("let Threshold = 100;\nT | where Value > Threshold");
        assert_eq!(q.lets.len(), 1);
        assert_eq!(q.lets[0].name.name, "Threshold");
        assert_eq!(q.lets[0].value, LetValue::Scalar(Expr::long(100)));
        assert_eq!(q.stages.len(), 1);
    }

    #[test]
    fn union_source() {
        let q = ok("union T1, T2 | where Value > 50");
        assert_eq!(
            q.source,
            Source::Union(vec![
                Source::Table(Ident::new("T1")),
                Source::Table(Ident::new("T2"))
            ])
        );
        assert!(matches!(q.stages[0], Stage::Where(_)));
    }

    #[test]
    fn precedence_and_or() {
        let q = ok("T | where A == 1 or B == 2 and C == 3");
        let Stage::Where(Expr::Binary { op, right, .. }) = &q.stages[0] else {
            panic!()
        };
        assert_eq!(*op, BinaryOp::Or);
        assert!(matches!(**right, Expr::Binary { op: BinaryOp::And, .. }));
    }

    #[test]
    fn join_with_kind_and_conditions() {
        let q = ok("TableA | join kind=inner TableB on $left.JoinKey == $right.KeyColumn");
        let Stage::Join { kind, right, on } = &q.stages[0] else {
            panic!()
        };
        assert_eq!(*kind, JoinKind::Inner);
        assert_eq!(right.source, Source::Table(Ident::new("TableB")));
        assert_eq!(on.len(), 1);
    }

    #[test]
    fn case_becomes_case_expression() {
        let q = ok("T | extend S = case(V > 100, \"High\", V < 50, \"Low\", \"Medium\")");
        let Stage::Extend(items) = &q.stages[0] else { panic!() };
        let Expr::Case { branches, .. } = &items[0].expr else { panic!() };
        assert_eq!(branches.len(), 2);
    }

    #[test]
    fn subquery_in_extend() {
        let q = ok("T | extend NewValue = (subquery | summarize avg(Value))");
        let Stage::Extend(items) = &q.stages[0] else { panic!() };
        assert!(matches!(items[0].expr, Expr::Subquery(_)));
    }

    #[test]
    fn between_without_parens_is_diagnosed() {
        let parsed = parse("T | where Value between 1 .. 5");
        assert_eq!(codes_of("T | where Value between 1 .. 5"), vec![codes::BETWEEN_MISSING_PARENS]);
        let Stage::Where(Expr::Between { low, high, .. }) = &parsed.query.unwrap().stages[0] else {
            panic!()
        };
        assert_eq!(**low, Expr::long(1));
        assert_eq!(**high, Expr::long(5));
    }

    #[test]
    fn bare_assignment_is_diagnosed() {
        let parsed = parse("T | X = A + 1 | project X");
        assert_eq!(
            parsed.diagnostics.iter().map(|d| d.code.as_str()).collect::<Vec<_>>(),
            vec![codes::MISSING_EXTEND]
        );
        assert!(matches!(parsed.query.unwrap().stages[0], Stage::Assignment(_)));
    }

    #[test]
    fn syntax_errors() {
        assert_eq!(codes_of("T | frobnicate 3"), vec![codes::UNKNOWN_OPERATOR]);
        assert_eq!(codes_of("T | where A > 1 |"), vec![codes::DANGLING_PIPE]);
        assert_eq!(codes_of("T | where (A > 1"), vec![codes::UNBALANCED_PARENS]);
        assert_eq!(codes_of("T | where A > 1)"), vec![codes::UNBALANCED_PARENS]);
        assert_eq!(codes_of(""), vec![codes::EMPTY_QUERY]);
        assert_eq!(codes_of("T | join kind=sideways U on K"), vec![codes::INVALID_JOIN_KIND]);
    }

    #[test]
    fn negative_numbers_fold() {
        let q = ok("T | where X > -5");
        let Stage::Where(Expr::Binary { right, .. }) = &q.stages[0] else { panic!() };
        assert_eq!(**right, Expr::long(-5));
    }

    #[test]
    fn mv_expand_with_type() {
        let q = ok("T | mv-expand Key=range(1, 3, 1) to typeof(long) limit 10");
        let Stage::MvExpand { items, limit, .. } = &q.stages[0] else { panic!() };
        assert_eq!(items[0].name.as_ref().unwrap().name, "Key");
        assert_eq!(items[0].to_type.as_deref(), Some("long"));
        assert!(limit.is_some());
    }

    #[test]
    fn string_decoding() {
        assert_eq!(decode_string("'a\\'b'"), "a'b");
        assert_eq!(decode_string("@'C:\\temp'"), "C:\\temp");
        assert_eq!(decode_quoted_identifier("['Name with space']"), "Name with space");
    }
}
