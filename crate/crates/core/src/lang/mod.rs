//! The reasoning-program language: a closed, indentation-sensitive subset of
//! Python with soft-logic operators.
//!
//! ```text
//! x = score("red", 1) & score("sphere", 1)
//! if x.count() > 1:
//!   return "many"
//! return x.exists()
//! ```
//!
//! The grammar is documented in `docs/grammar.ebnf` at the repository root.

pub mod ast;
mod parser;
mod printer;
mod token;

pub use ast::{BinOp, Builtin, Expr, ExprKind, Literal, Method, Program, Stmt, StmtKind, UnaryOp};
pub use parser::parse;
pub use printer::{expr_to_string, pretty_print};
pub use token::{tokenize, Keyword, Punct, Token, TokenKind};

use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Maximum nesting depth of blocks, brackets, and expressions.
pub const MAX_NESTING: usize = 64;
/// Maximum accepted program size in bytes.
pub const MAX_SOURCE_BYTES: usize = 64 * 1024;

/// Half-open byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

/// 1-based line and column (in characters) of byte offset `offset`.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let column = src[line_start..offset].chars().count() + 1;
    (line, column)
}

/// A tokenizer or parser diagnostic.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct SyntaxError {
    pub message: String,
    pub span: Span,
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
}

impl SyntaxError {
    pub fn new(src: &str, span: Span, message: impl Into<String>) -> Self {
        let (line, column) = line_col(src, span.start);
        SyntaxError {
            message: message.into(),
            span,
            line,
            column,
            expected: Vec::new(),
        }
    }

    pub fn with_expected(mut self, expected: Vec<String>) -> Self {
        self.expected = expected;
        self
    }
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

/// Tokenizes and parses `source`.
pub fn parse_program(source: &str) -> Result<Program, SyntaxError> {
    let tokens = tokenize(source)?;
    parse(source, &tokens)
}
