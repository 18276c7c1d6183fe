//! Syntax tree for the supported KQL subset.
//!
//! Structural equality ignores source positions: [`Ident`] compares by
//! name only, so `parse(render(q)) == q` holds even though offsets move.

use serde::Serialize;

use crate::span::Span;

#[derive(Debug, Clone, Eq, Serialize)]
pub struct Ident {
    pub name: String,
    #[serde(skip)]
    pub span: Span,
}

impl PartialEq for Ident {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident {
            name: name.into(),
            span: Span::default(),
        }
    }

    pub fn at(name: impl Into<String>, span: Span) -> Self {
        Ident {
            name: name.into(),
            span,
        }
    }
}

/// A parsed query: optional leading `let` statements, a tabular source,
/// and the pipeline stages applied to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Query {
    pub lets: Vec<LetBinding>,
    pub source: Source,
    pub stages: Vec<Stage>,
}

impl Query {
    pub fn from_table(name: impl Into<String>) -> Self {
        Query {
            lets: Vec::new(),
            source: Source::Table(Ident::new(name)),
            stages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LetBinding {
    pub name: Ident,
    pub value: LetValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LetValue {
    Scalar(Expr),
    Tabular(Query),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Table(Ident),
    Union(Vec<Source>),
    Subquery(Box<Query>),
    Range {
        column: Ident,
        from: Expr,
        to: Expr,
        step: Expr,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedExpr {
    pub name: Option<Ident>,
    pub expr: Expr,
}

impl NamedExpr {
    pub fn unnamed(expr: Expr) -> Self {
        NamedExpr { name: None, expr }
    }

    pub fn named(name: impl Into<String>, expr: Expr) -> Self {
        NamedExpr {
            name: Some(Ident::new(name)),
            expr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NullsPosition {
    First,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortKey {
    pub expr: Expr,
    pub order: Option<SortOrder>,
    pub nulls: Option<NullsPosition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinKind {
    Inner,
    InnerUnique,
    LeftOuter,
    RightOuter,
    FullOuter,
    LeftSemi,
    LeftAnti,
    LeftAntiSemi,
    RightSemi,
    RightAnti,
    RightAntiSemi,
}

impl JoinKind {
    pub const ALL: [JoinKind; 11] = [
        JoinKind::Inner,
        JoinKind::InnerUnique,
        JoinKind::LeftOuter,
        JoinKind::RightOuter,
        JoinKind::FullOuter,
        JoinKind::LeftSemi,
        JoinKind::LeftAnti,
        JoinKind::LeftAntiSemi,
        JoinKind::RightSemi,
        JoinKind::RightAnti,
        JoinKind::RightAntiSemi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JoinKind::Inner => "inner",
            JoinKind::InnerUnique => "innerunique",
            JoinKind::LeftOuter => "leftouter",
            JoinKind::RightOuter => "rightouter",
            JoinKind::FullOuter => "fullouter",
            JoinKind::LeftSemi => "leftsemi",
            JoinKind::LeftAnti => "leftanti",
            JoinKind::LeftAntiSemi => "leftantisemi",
            JoinKind::RightSemi => "rightsemi",
            JoinKind::RightAnti => "rightanti",
            JoinKind::RightAntiSemi => "rightantisemi",
        }
    }

    pub fn parse(text: &str) -> Option<JoinKind> {
        JoinKind::ALL.into_iter().find(|k| k.as_str() == text)
    }

    /// Kinds whose output carries only the left side's columns.
    pub fn keeps_left_only(self) -> bool {
        matches!(
            self,
            JoinKind::LeftSemi | JoinKind::LeftAnti | JoinKind::LeftAntiSemi
        )
    }

    /// Kinds whose output carries only the right side's columns.
    pub fn keeps_right_only(self) -> bool {
        matches!(
            self,
            JoinKind::RightSemi | JoinKind::RightAnti | JoinKind::RightAntiSemi
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvExpandItem {
    pub name: Option<Ident>,
    pub expr: Expr,
    pub to_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Where(Expr),
    Project(Vec<NamedExpr>),
    ProjectAway(Vec<Ident>),
    /// `new = old` pairs.
    ProjectRename(Vec<(Ident, Ident)>),
    Extend(Vec<NamedExpr>),
    Summarize {
        aggregates: Vec<NamedExpr>,
        by: Vec<NamedExpr>,
    },
    /// `order by` and `sort by`.
    Order(Vec<SortKey>),
    /// `take` and `limit`.
    Take(Expr),
    Top {
        count: Expr,
        key: SortKey,
    },
    /// Empty column list means `distinct *`.
    Distinct(Vec<Expr>),
    Count,
    Join {
        kind: JoinKind,
        right: Box<Query>,
        on: Vec<Expr>,
    },
    Union(Vec<Source>),
    MvExpand {
        bag_expansion: Option<String>,
        items: Vec<MvExpandItem>,
        limit: Option<Expr>,
    },
    MvApply {
        items: Vec<MvExpandItem>,
        stages: Vec<Stage>,
    },
    Serialize(Vec<NamedExpr>),
    Render {
        visualization: Ident,
        properties: Vec<(Ident, Expr)>,
    },
    /// Bare `| Name = expr, ...` assignments missing their `extend` keyword.
    Assignment(Vec<NamedExpr>),
    /// Unparseable stage text, kept verbatim for best-effort rendering.
    Invalid(String),
}

impl Stage {
    pub fn operator_name(&self) -> &'static str {
        match self {
            Stage::Where(_) => "where",
            Stage::Project(_) => "project",
            Stage::ProjectAway(_) => "project-away",
            Stage::ProjectRename(_) => "project-rename",
            Stage::Extend(_) => "extend",
            Stage::Summarize { .. } => "summarize",
            Stage::Order(_) => "order",
            Stage::Take(_) => "take",
            Stage::Top { .. } => "top",
            Stage::Distinct(_) => "distinct",
            Stage::Count => "count",
            Stage::Join { .. } => "join",
            Stage::Union(_) => "union",
            Stage::MvExpand { .. } => "mv-expand",
            Stage::MvApply { .. } => "mv-apply",
            Stage::Serialize(_) => "serialize",
            Stage::Render { .. } => "render",
            Stage::Assignment(_) => "assignment",
            Stage::Invalid(_) => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "type", content = "value")]
pub enum Literal {
    String(String),
    Long(i64),
    Real(f64),
    Bool(bool),
    /// Full lexed text, e.g. `datetime(2024-01-01)`.
    DateTime(String),
    /// Full lexed text, e.g. `1h` or `timespan(00:10:00)`.
    Timespan(String),
    /// Full lexed text, e.g. `dynamic(["a", "b"])`.
    Dynamic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    EqCi,
    NeCi,
    Contains,
    NotContains,
    ContainsCs,
    NotContainsCs,
    Has,
    NotHas,
    HasCs,
    NotHasCs,
    HasPrefix,
    HasSuffix,
    StartsWith,
    NotStartsWith,
    StartsWithCs,
    EndsWith,
    NotEndsWith,
    EndsWithCs,
    MatchesRegex,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

/// Binding strength, higher binds tighter.
pub const PREC_OR: u8 = 1;
pub const PREC_AND: u8 = 2;
pub const PREC_COMPARE: u8 = 3;
pub const PREC_ADD: u8 = 4;
pub const PREC_MUL: u8 = 5;
pub const PREC_UNARY: u8 = 6;
pub const PREC_POSTFIX: u8 = 7;

impl BinaryOp {
    pub const ALL: [BinaryOp; 32] = [
        BinaryOp::Or,
        BinaryOp::And,
        BinaryOp::Eq,
        BinaryOp::Ne,
        BinaryOp::Lt,
        BinaryOp::Le,
        BinaryOp::Gt,
        BinaryOp::Ge,
        BinaryOp::EqCi,
        BinaryOp::NeCi,
        BinaryOp::Contains,
        BinaryOp::NotContains,
        BinaryOp::ContainsCs,
        BinaryOp::NotContainsCs,
        BinaryOp::Has,
        BinaryOp::NotHas,
        BinaryOp::HasCs,
        BinaryOp::NotHasCs,
        BinaryOp::HasPrefix,
        BinaryOp::HasSuffix,
        BinaryOp::StartsWith,
        BinaryOp::NotStartsWith,
        BinaryOp::StartsWithCs,
        BinaryOp::EndsWith,
        BinaryOp::NotEndsWith,
        BinaryOp::EndsWithCs,
        BinaryOp::MatchesRegex,
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Mod,
    ];

    pub fn as_str(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Or => "or",
            And => "and",
            Eq => "==",
            Ne => "!=",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
            EqCi => "=~",
            NeCi => "!~",
            Contains => "contains",
            NotContains => "!contains",
            ContainsCs => "contains_cs",
            NotContainsCs => "!contains_cs",
            Has => "has",
            NotHas => "!has",
            HasCs => "has_cs",
            NotHasCs => "!has_cs",
            HasPrefix => "hasprefix",
            HasSuffix => "hassuffix",
            StartsWith => "startswith",
            NotStartsWith => "!startswith",
            StartsWithCs => "startswith_cs",
            EndsWith => "endswith",
            NotEndsWith => "!endswith",
            EndsWithCs => "endswith_cs",
            MatchesRegex => "matches regex",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Mod => "%",
        }
    }

    pub fn precedence(self) -> u8 {
        use BinaryOp::*;
        match self {
            Or => PREC_OR,
            And => PREC_AND,
            Add | Sub => PREC_ADD,
            Mul | Div | Mod => PREC_MUL,
            _ => PREC_COMPARE,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == PREC_COMPARE
    }

    /// Looks up a single-token operator (`matches regex` is handled by the parser).
    pub fn from_token(text: &str) -> Option<BinaryOp> {
        if text == "matches regex" {
            return None;
        }
        if text == "<>" {
            return Some(BinaryOp::Ne);
        }
        BinaryOp::ALL.into_iter().find(|op| op.as_str() == text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ListOp {
    In,
    NotIn,
    InCi,
    NotInCi,
    HasAny,
    HasAll,
}

impl ListOp {
    pub const ALL: [ListOp; 6] = [
        ListOp::In,
        ListOp::NotIn,
        ListOp::InCi,
        ListOp::NotInCi,
        ListOp::HasAny,
        ListOp::HasAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ListOp::In => "in",
            ListOp::NotIn => "!in",
            ListOp::InCi => "in~",
            ListOp::NotInCi => "!in~",
            ListOp::HasAny => "has_any",
            ListOp::HasAll => "has_all",
        }
    }

    pub fn from_token(text: &str) -> Option<ListOp> {
        ListOp::ALL.into_iter().find(|op| op.as_str() == text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnaryOp {
    Neg,
    Plus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyKey {
    Name(String),
    Index(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expr {
    Column(Ident),
    Literal(Literal),
    Call {
        name: Ident,
        args: Vec<Expr>,
    },
    Case {
        branches: Vec<(Expr, Expr)>,
        default: Box<Expr>,
    },
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    InList {
        op: ListOp,
        left: Box<Expr>,
        items: Vec<Expr>,
    },
    Between {
        expr: Box<Expr>,
        low: Box<Expr>,
        high: Box<Expr>,
        negated: bool,
    },
    Property {
        base: Box<Expr>,
        key: PropertyKey,
    },
    Subquery(Box<Query>),
    /// `*` inside argument lists, e.g. `arg_max(Timestamp, *)`.
    Star,
}

impl Expr {
    pub fn column(name: impl Into<String>) -> Expr {
        Expr::Column(Ident::new(name))
    }

    pub fn call(name: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::Call {
            name: Ident::new(name),
            args,
        }
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn long(v: i64) -> Expr {
        Expr::Literal(Literal::Long(v))
    }

    pub fn string(v: impl Into<String>) -> Expr {
        Expr::Literal(Literal::String(v.into()))
    }

    pub fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::InList { .. } | Expr::Between { .. } => PREC_COMPARE,
            Expr::Unary { .. } => PREC_UNARY,
            _ => PREC_POSTFIX + 1,
        }
    }

    /// Visits this expression and every nested expression, pre-order.
    /// Subquery contents are not entered.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Column(_) | Expr::Literal(_) | Expr::Star | Expr::Subquery(_) => {}
            Expr::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Case { branches, default } => {
                for (c, v) in branches {
                    c.walk(f);
                    v.walk(f);
                }
                default.walk(f);
            }
            Expr::Unary { operand, .. } => operand.walk(f),
            Expr::Binary { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            Expr::InList { left, items, .. } => {
                left.walk(f);
                items.iter().for_each(|i| i.walk(f));
            }
            Expr::Between {
                expr, low, high, ..
            } => {
                expr.walk(f);
                low.walk(f);
                high.walk(f);
            }
            Expr::Property { base, key } => {
                base.walk(f);
                if let PropertyKey::Index(i) = key {
                    i.walk(f);
                }
            }
        }
    }

    /// Mutable pre-order visit; subqueries are not entered.
    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Column(_) | Expr::Literal(_) | Expr::Star | Expr::Subquery(_) => {}
            Expr::Call { args, .. } => args.iter_mut().for_each(|a| a.walk_mut(f)),
            Expr::Case { branches, default } => {
                for (c, v) in branches {
                    c.walk_mut(f);
                    v.walk_mut(f);
                }
                default.walk_mut(f);
            }
            Expr::Unary { operand, .. } => operand.walk_mut(f),
            Expr::Binary { left, right, .. } => {
                left.walk_mut(f);
                right.walk_mut(f);
            }
            Expr::InList { left, items, .. } => {
                left.walk_mut(f);
                items.iter_mut().for_each(|i| i.walk_mut(f));
            }
            Expr::Between {
                expr, low, high, ..
            } => {
                expr.walk_mut(f);
                low.walk_mut(f);
                high.walk_mut(f);
            }
            Expr::Property { base, key } => {
                base.walk_mut(f);
                if let PropertyKey::Index(i) = key {
                    i.walk_mut(f);
                }
            }
        }
    }
}
