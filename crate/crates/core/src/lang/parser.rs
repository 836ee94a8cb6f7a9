//! Recursive-descent parser.
//!
//! Precedence, loosest first: `or`/`|`, `and`/`&`, `not`, comparisons
//! (non-associative), `+ -`, `* /`, unary `-`, postfix (call, method, index).

use super::ast::*;
use super::token::{Keyword, Punct, Token, TokenKind};
use super::{Span, SyntaxError, MAX_NESTING};

pub struct Parser<'a> {
    src: &'a str,
    tokens: &'a [Token],
    pos: usize,
    depth: usize,
}

/// Parses a token stream produced by [`super::tokenize`] for `src`.
pub fn parse(src: &str, tokens: &[Token]) -> Result<Program, SyntaxError> {
    if !matches!(tokens.last().map(|t| &t.kind), Some(TokenKind::Eof)) {
        let end = src.len();
        return Err(SyntaxError::new(
            src,
            Span::new(end, end),
            "token stream must end with end of input",
        ));
    }
    let mut p = Parser {
        src,
        tokens,
        pos: 0,
        depth: 0,
    };
    p.program()
}

type PResult<T> = Result<T, SyntaxError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_kind(&self) -> &'a TokenKind {
        &self.peek().kind
    }

    fn peek_nth(&self, n: usize) -> &'a TokenKind {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].kind
    }

    fn bump(&mut self) -> &'a Token {
        let t = self.peek();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at_op(&self, p: Punct) -> bool {
        *self.peek_kind() == TokenKind::Op(p)
    }

    fn at_kw(&self, k: Keyword) -> bool {
        *self.peek_kind() == TokenKind::Keyword(k)
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn unexpected(&self, expected: &[&str]) -> SyntaxError {
        let tok = self.peek();
        let msg = match expected {
            [] => format!("unexpected {}", tok.kind),
            [one] => format!("expected {one}, found {}", tok.kind),
            many => format!("expected one of {}, found {}", many.join(", "), tok.kind),
        };
        SyntaxError::new(self.src, tok.span, msg)
            .with_expected(expected.iter().map(|s| s.to_string()).collect())
    }

    fn error_at(&self, span: Span, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.src, span, msg)
    }

    fn expect_op(&mut self, p: Punct) -> PResult<&'a Token> {
        if self.at_op(p) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&[&format!("`{}`", p.as_str())]))
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.error_at(self.peek().span, "program is nested too deeply"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn program(&mut self) -> PResult<Program> {
        let mut statements = Vec::new();
        loop {
            match self.peek_kind() {
                TokenKind::Eof => break,
                TokenKind::Newline => {
                    self.bump();
                }
                TokenKind::Indent => {
                    return Err(self.error_at(self.peek().span, "unexpected indent"));
                }
                _ => statements.push(self.statement()?),
            }
        }
        Ok(Program { statements })
    }

    fn statement(&mut self) -> PResult<Stmt> {
        match self.peek_kind() {
            TokenKind::Keyword(Keyword::If) => self.if_statement(),
            TokenKind::Keyword(Keyword::For) => self.for_statement(),
            TokenKind::Keyword(Keyword::Elif) | TokenKind::Keyword(Keyword::Else) => Err(self
                .error_at(
                    self.peek().span,
                    format!("{} without a matching `if`", self.peek_kind()),
                )),
            _ => {
                let stmt = self.simple_statement()?;
                self.end_of_line()?;
                Ok(stmt)
            }
        }
    }

    fn end_of_line(&mut self) -> PResult<()> {
        match self.peek_kind() {
            TokenKind::Newline => {
                self.bump();
                Ok(())
            }
            TokenKind::Eof | TokenKind::Dedent => Ok(()),
            _ => Err(self.unexpected(&["end of line"])),
        }
    }

    fn simple_statement(&mut self) -> PResult<Stmt> {
        let start = self.peek().span.start;
        if self.at_kw(Keyword::Return) {
            self.bump();
            let value = self.expr()?;
            return Ok(Stmt {
                kind: StmtKind::Return(value),
                span: Span::new(start, self.prev_end()),
            });
        }
        if let (TokenKind::Ident(name), TokenKind::Op(Punct::Assign)) =
            (self.peek_kind(), self.peek_nth(1))
        {
            self.bump();
            self.bump();
            let value = self.expr()?;
            return Ok(Stmt {
                kind: StmtKind::Assign {
                    name: name.clone(),
                    value,
                },
                span: Span::new(start, self.prev_end()),
            });
        }
        let e = self.expr()?;
        if self.at_op(Punct::Assign) {
            return Err(self.error_at(e.span, "only plain names can be assigned"));
        }
        Ok(Stmt {
            kind: StmtKind::Expr(e),
            span: Span::new(start, self.prev_end()),
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_op(Punct::Colon)?;
        if *self.peek_kind() != TokenKind::Newline {
            if matches!(self.peek_kind(), TokenKind::Eof) {
                return Err(self.unexpected(&["an indented block"]));
            }
            let stmt = self.simple_statement()?;
            self.end_of_line()?;
            return Ok(vec![stmt]);
        }
        self.bump();
        if *self.peek_kind() != TokenKind::Indent {
            return Err(self
                .error_at(self.peek().span, "expected indented block")
                .with_expected(vec!["an indented block".into()]));
        }
        self.bump();
        self.enter()?;
        let mut body = Vec::new();
        loop {
            match self.peek_kind() {
                TokenKind::Dedent => {
                    self.bump();
                    break;
                }
                TokenKind::Eof => break,
                TokenKind::Newline => {
                    self.bump();
                }
                _ => body.push(self.statement()?),
            }
        }
        self.leave();
        Ok(body)
    }

    fn if_statement(&mut self) -> PResult<Stmt> {
        let start = self.bump().span.start;
        let cond = self.expr()?;
        let then_block = self.block()?;
        let mut elifs = Vec::new();
        while self.at_kw(Keyword::Elif) {
            self.bump();
            let c = self.expr()?;
            let b = self.block()?;
            elifs.push((c, b));
        }
        let else_block = if self.at_kw(Keyword::Else) {
            self.bump();
            Some(self.block()?)
        } else {
            None
        };
        Ok(Stmt {
            kind: StmtKind::If {
                cond,
                then_block,
                elifs,
                else_block,
            },
            span: Span::new(start, self.prev_end()),
        })
    }

    fn for_statement(&mut self) -> PResult<Stmt> {
        let start = self.bump().span.start;
        let mut targets = vec![self.ident("a loop variable")?];
        if self.at_op(Punct::Comma) {
            self.bump();
            targets.push(self.ident("a second loop variable")?);
        }
        if !self.at_kw(Keyword::In) {
            return Err(self.unexpected(&["`in`"]));
        }
        self.bump();
        let iterable = self.expr()?;
        let body = self.block()?;
        Ok(Stmt {
            kind: StmtKind::For {
                targets,
                iterable,
                body,
            },
            span: Span::new(start, self.prev_end()),
        })
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek_kind() {
            TokenKind::Ident(name) => {
                self.bump();
                Ok(name.clone())
            }
            _ => Err(self.unexpected(&[what])),
        }
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.or_expr();
        self.leave();
        e
    }

    fn binary(&self, op: BinOp, l: Expr, r: Expr) -> Expr {
        let span = l.span.join(r.span);
        Expr::new(ExprKind::Binary(op, Box::new(l), Box::new(r)), span)
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.at_op(Punct::Pipe) || self.at_kw(Keyword::Or) {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = self.binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.at_op(Punct::Amp) || self.at_kw(Keyword::And) {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = self.binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.at_kw(Keyword::Not) {
            let start = self.bump().span.start;
            self.enter()?;
            let inner = self.not_expr()?;
            self.leave();
            let span = Span::new(start, inner.span.end);
            return Ok(Expr::new(
                ExprKind::Unary(UnaryOp::Not, Box::new(inner)),
                span,
            ));
        }
        self.comparison()
    }

    fn comparison_op(&self) -> Option<BinOp> {
        Some(match self.peek_kind() {
            TokenKind::Op(Punct::EqEq) => BinOp::Eq,
            TokenKind::Op(Punct::NotEq) => BinOp::Ne,
            TokenKind::Op(Punct::Lt) => BinOp::Lt,
            TokenKind::Op(Punct::Gt) => BinOp::Gt,
            TokenKind::Op(Punct::Le) => BinOp::Le,
            TokenKind::Op(Punct::Ge) => BinOp::Ge,
            _ => return None,
        })
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let lhs = self.additive()?;
        let Some(op) = self.comparison_op() else {
            return Ok(lhs);
        };
        self.bump();
        let rhs = self.additive()?;
        if self.comparison_op().is_some() {
            return Err(self.error_at(
                self.peek().span,
                "comparison chaining is not supported; combine comparisons with `&`",
            ));
        }
        Ok(self.binary(op, lhs, rhs))
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek_kind() {
                TokenKind::Op(Punct::Plus) => BinOp::Add,
                TokenKind::Op(Punct::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = self.binary(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                TokenKind::Op(Punct::Star) => BinOp::Mul,
                TokenKind::Op(Punct::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = self.binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.at_op(Punct::Minus) {
            let start = self.bump().span.start;
            self.enter()?;
            let inner = self.unary()?;
            self.leave();
            let span = Span::new(start, inner.span.end);
            return Ok(Expr::new(
                ExprKind::Unary(UnaryOp::Neg, Box::new(inner)),
                span,
            ));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            if self.at_op(Punct::Dot) {
                self.bump();
                let name_tok = self.peek();
                let name = self.ident("a method name")?;
                let Some(method) = Method::from_name(&name) else {
                    return Err(self.error_at(
                        name_tok.span,
                        format!(
                            "unknown method `{name}`; expected one of exists, forall, count, iota, implies"
                        ),
                    ));
                };
                if !self.at_op(Punct::LParen) {
                    return Err(self.unexpected(&["`(`"]));
                }
                let args = self.arguments()?;
                let span = Span::new(e.span.start, self.prev_end());
                e = Expr::new(
                    ExprKind::MethodCall {
                        receiver: Box::new(e),
                        method,
                        args,
                    },
                    span,
                );
            } else if self.at_op(Punct::LBracket) {
                self.bump();
                let index = self.expr()?;
                self.expect_op(Punct::RBracket)?;
                let span = Span::new(e.span.start, self.prev_end());
                e = Expr::new(ExprKind::Index(Box::new(e), Box::new(index)), span);
            } else if self.at_op(Punct::LParen) {
                return Err(self.error_at(self.peek().span, "only builtin functions can be called"));
            } else {
                return Ok(e);
            }
        }
    }

    /// `( expr, ... )` with an optional trailing comma.
    fn arguments(&mut self) -> PResult<Vec<Expr>> {
        self.expect_op(Punct::LParen)?;
        self.sequence(Punct::RParen)
    }

    fn sequence(&mut self, close: Punct) -> PResult<Vec<Expr>> {
        let mut items = Vec::new();
        loop {
            if self.at_op(close) {
                self.bump();
                return Ok(items);
            }
            items.push(self.expr()?);
            if self.at_op(Punct::Comma) {
                self.bump();
            } else if self.at_op(close) {
                self.bump();
                return Ok(items);
            } else {
                return Err(self.unexpected(&["`,`", &format!("`{}`", close.as_str())]));
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let tok = self.peek();
        let lit = |l| Ok(Expr::new(ExprKind::Literal(l), tok.span));
        match &tok.kind {
            TokenKind::Int(i) => {
                self.bump();
                lit(Literal::Int(*i))
            }
            TokenKind::Float(x) => {
                self.bump();
                lit(Literal::Float(*x))
            }
            TokenKind::Str(s) => {
                self.bump();
                lit(Literal::Str(s.clone()))
            }
            TokenKind::Keyword(Keyword::True) => {
                self.bump();
                lit(Literal::Bool(true))
            }
            TokenKind::Keyword(Keyword::False) => {
                self.bump();
                lit(Literal::Bool(false))
            }
            TokenKind::Ident(name) => {
                self.bump();
                if !self.at_op(Punct::LParen) {
                    return Ok(Expr::new(ExprKind::Name(name.clone()), tok.span));
                }
                let Some(builtin) = Builtin::from_name(name) else {
                    return Err(self.error_at(
                        tok.span,
                        format!(
                            "unknown function `{name}`; expected one of score, query, len, str, int, abs"
                        ),
                    ));
                };
                let args = self.arguments()?;
                Ok(Expr::new(
                    ExprKind::Call { builtin, args },
                    Span::new(tok.span.start, self.prev_end()),
                ))
            }
            TokenKind::Op(Punct::LParen) => {
                self.bump();
                let inner = self.expr()?;
                self.expect_op(Punct::RParen)?;
                Ok(Expr::new(
                    inner.kind,
                    Span::new(tok.span.start, self.prev_end()),
                ))
            }
            TokenKind::Op(Punct::LBracket) => {
                self.bump();
                self.enter()?;
                let items = self.sequence(Punct::RBracket)?;
                self.leave();
                Ok(Expr::new(
                    ExprKind::List(items),
                    Span::new(tok.span.start, self.prev_end()),
                ))
            }
            _ => Err(self.unexpected(&["an expression"])),
        }
    }
}
