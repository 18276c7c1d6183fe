//! A KQL subset: lexing, parsing, validation, rendering, set extraction
//! and in-memory evaluation.

pub mod ast;
pub mod diagnostic;
pub mod engine;
pub mod extract;
pub mod functions;
pub mod lexer;
pub mod naming;
pub mod parser;
pub mod render;
pub mod schema;
pub mod span;
pub mod validate;

pub use ast::Query;
pub use diagnostic::{codes, Diagnostic, ScopeEntry, Severity};
pub use extract::{extract_filter_columns, extract_filter_literals, extract_tables};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::{parse, Parsed};
pub use render::render;
pub use schema::{ColumnType, Schema, TableSchema};
pub use span::Span;
pub use validate::{analyze, output_columns, validate, Analysis};
