//! Tokenizer with significant indentation.

use std::fmt;

use super::{Span, SyntaxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    If,
    Elif,
    Else,
    For,
    In,
    Return,
    Not,
    And,
    Or,
    True,
    False,
}

impl Keyword {
    fn from_ident(s: &str) -> Option<Self> {
        Some(match s {
            "if" => Keyword::If,
            "elif" => Keyword::Elif,
            "else" => Keyword::Else,
            "for" => Keyword::For,
            "in" => Keyword::In,
            "return" => Keyword::Return,
            "not" => Keyword::Not,
            "and" => Keyword::And,
            "or" => Keyword::Or,
            "True" => Keyword::True,
            "False" => Keyword::False,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::If => "if",
            Keyword::Elif => "elif",
            Keyword::Else => "else",
            Keyword::For => "for",
            Keyword::In => "in",
            Keyword::Return => "return",
            Keyword::Not => "not",
            Keyword::And => "and",
            Keyword::Or => "or",
            Keyword::True => "True",
            Keyword::False => "False",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Punct {
    Amp,
    Pipe,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Gt,
    Le,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Dot,
    Comma,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
}

impl Punct {
    pub fn as_str(self) -> &'static str {
        match self {
            Punct::Amp => "&",
            Punct::Pipe => "|",
            Punct::Assign => "=",
            Punct::EqEq => "==",
            Punct::NotEq => "!=",
            Punct::Lt => "<",
            Punct::Gt => ">",
            Punct::Le => "<=",
            Punct::Ge => ">=",
            Punct::Plus => "+",
            Punct::Minus => "-",
            Punct::Star => "*",
            Punct::Slash => "/",
            Punct::Dot => ".",
            Punct::Comma => ",",
            Punct::LParen => "(",
            Punct::RParen => ")",
            Punct::LBracket => "[",
            Punct::RBracket => "]",
            Punct::Colon => ":",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Keyword(Keyword),
    Op(Punct),
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Int(i) => write!(f, "integer `{i}`"),
            TokenKind::Float(x) => write!(f, "number `{x:?}`"),
            TokenKind::Str(_) => write!(f, "string literal"),
            TokenKind::Keyword(k) => write!(f, "`{}`", k.as_str()),
            TokenKind::Op(p) => write!(f, "`{}`", p.as_str()),
            TokenKind::Newline => write!(f, "end of line"),
            TokenKind::Indent => write!(f, "indent"),
            TokenKind::Dedent => write!(f, "dedent"),
            TokenKind::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    tokens: Vec<Token>,
    indents: Vec<usize>,
    /// Offsets of the currently open brackets.
    open: Vec<usize>,
}

/// Splits `source` into tokens. Blank and comment-only lines are skipped;
/// newlines inside brackets are ignored.
pub fn tokenize(source: &str) -> Result<Vec<Token>, SyntaxError> {
    if source.len() > super::MAX_SOURCE_BYTES {
        return Err(SyntaxError::new(
            source,
            Span::new(super::MAX_SOURCE_BYTES, super::MAX_SOURCE_BYTES),
            format!("program exceeds the {} byte limit", super::MAX_SOURCE_BYTES),
        ));
    }
    let mut lx = Lexer {
        src: source,
        bytes: source.as_bytes(),
        pos: 0,
        tokens: Vec::new(),
        indents: vec![0],
        open: Vec::new(),
    };
    lx.run()?;
    Ok(lx.tokens)
}

impl Lexer<'_> {
    fn err(&self, at: usize, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.src, Span::new(at, at + 1), msg)
    }

    fn push(&mut self, kind: TokenKind, start: usize, end: usize) {
        self.tokens.push(Token {
            kind,
            span: Span::new(start, end),
        });
    }

    fn run(&mut self) -> Result<(), SyntaxError> {
        let mut at_line_start = true;
        while self.pos < self.bytes.len() {
            if at_line_start && self.open.is_empty() {
                at_line_start = false;
                if self.line_start()? {
                    at_line_start = true;
                    continue;
                }
            }
            let c = self.bytes[self.pos];
            match c {
                b' ' | b'\r' | b'\t' => self.pos += 1,
                b'#' => self.skip_comment(),
                b'\n' => {
                    if self.open.is_empty() {
                        self.push(TokenKind::Newline, self.pos, self.pos + 1);
                        at_line_start = true;
                    }
                    self.pos += 1;
                }
                b'"' => self.string()?,
                b'0'..=b'9' => self.number()?,
                c if c == b'_' || c.is_ascii_alphabetic() => self.ident(),
                _ => self.punct()?,
            }
        }
        let end = self.bytes.len();
        if let Some(&start) = self.open.last() {
            let bracket = &self.src[start..start + 1];
            return Err(self.err(start, format!("`{bracket}` is never closed")));
        }
        if !matches!(
            self.tokens.last().map(|t| &t.kind),
            None | Some(TokenKind::Newline)
        ) {
            self.push(TokenKind::Newline, end, end);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, end, end);
        }
        self.push(TokenKind::Eof, end, end);
        Ok(())
    }

    /// Handles leading whitespace of a physical line. Returns true if the
    /// line was blank and fully consumed.
    fn line_start(&mut self) -> Result<bool, SyntaxError> {
        let start = self.pos;
        let mut width = 0;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' => {
                    width += 1;
                    self.pos += 1;
                }
                b'\t' => {
                    return Err(self.err(self.pos, "tab characters are not allowed in indentation"))
                }
                _ => break,
            }
        }
        match self.bytes.get(self.pos) {
            None => return Ok(true),
            Some(b'\n') => {
                self.pos += 1;
                return Ok(true);
            }
            Some(b'\r') if self.bytes.get(self.pos + 1) == Some(&b'\n') => {
                self.pos += 2;
                return Ok(true);
            }
            Some(b'#') => {
                self.skip_comment();
                if self.pos < self.bytes.len() {
                    self.pos += 1;
                }
                return Ok(true);
            }
            _ => {}
        }
        let current = *self.indents.last().unwrap();
        if width > current {
            if self.indents.len() > super::MAX_NESTING {
                return Err(self.err(start, "blocks are nested too deeply"));
            }
            self.indents.push(width);
            self.push(TokenKind::Indent, self.pos, self.pos);
        } else if width < current {
            while *self.indents.last().unwrap() > width {
                self.indents.pop();
                self.push(TokenKind::Dedent, self.pos, self.pos);
            }
            if *self.indents.last().unwrap() != width {
                return Err(SyntaxError::new(
                    self.src,
                    Span::new(start, self.pos),
                    "unindent does not match any outer indentation level",
                ));
            }
        }
        Ok(false)
    }

    fn skip_comment(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
    }

    fn string(&mut self) -> Result<(), SyntaxError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(ch) = self.src[self.pos..].chars().next() else {
                return Err(self.err(start, "unterminated string literal"));
            };
            match ch {
                '"' => {
                    self.pos += 1;
                    break;
                }
                '\n' => return Err(self.err(start, "unterminated string literal")),
                '\\' => {
                    let esc = self.src[self.pos + 1..].chars().next();
                    let c = match esc {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some(_) => return Err(self.err(self.pos, "unknown escape sequence")),
                        None => return Err(self.err(start, "unterminated string literal")),
                    };
                    out.push(c);
                    self.pos += 2;
                }
                c => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
        self.push(TokenKind::Str(out), start, self.pos);
        Ok(())
    }

    fn number(&mut self) -> Result<(), SyntaxError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let is_float = self.bytes.get(self.pos) == Some(&b'.')
            && self
                .bytes
                .get(self.pos + 1)
                .is_some_and(|b| b.is_ascii_digit());
        if is_float {
            self.pos += 1;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_')
        {
            return Err(self.err(self.pos, "invalid numeric literal"));
        }
        let text = &self.src[start..self.pos];
        let kind = if is_float {
            TokenKind::Float(
                text.parse()
                    .map_err(|_| self.err(start, "invalid number"))?,
            )
        } else {
            TokenKind::Int(
                text.parse()
                    .map_err(|_| self.err(start, "integer literal is too large"))?,
            )
        };
        self.push(kind, start, self.pos);
        Ok(())
    }

    fn ident(&mut self) {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos] == b'_' || self.bytes[self.pos].is_ascii_alphanumeric())
        {
            self.pos += 1;
        }
        let text = &self.src[start..self.pos];
        let kind = match Keyword::from_ident(text) {
            Some(k) => TokenKind::Keyword(k),
            None => TokenKind::Ident(text.to_string()),
        };
        self.push(kind, start, self.pos);
    }

    fn punct(&mut self) -> Result<(), SyntaxError> {
        let start = self.pos;
        let next = self.bytes.get(self.pos + 1).copied();
        let (p, len) = match (self.bytes[self.pos], next) {
            (b'=', Some(b'=')) => (Punct::EqEq, 2),
            (b'!', Some(b'=')) => (Punct::NotEq, 2),
            (b'<', Some(b'=')) => (Punct::Le, 2),
            (b'>', Some(b'=')) => (Punct::Ge, 2),
            (b'&', _) => (Punct::Amp, 1),
            (b'|', _) => (Punct::Pipe, 1),
            (b'=', _) => (Punct::Assign, 1),
            (b'<', _) => (Punct::Lt, 1),
            (b'>', _) => (Punct::Gt, 1),
            (b'+', _) => (Punct::Plus, 1),
            (b'-', _) => (Punct::Minus, 1),
            (b'*', _) => (Punct::Star, 1),
            (b'/', _) => (Punct::Slash, 1),
            (b'.', _) => (Punct::Dot, 1),
            (b',', _) => (Punct::Comma, 1),
            (b'(', _) => (Punct::LParen, 1),
            (b')', _) => (Punct::RParen, 1),
            (b'[', _) => (Punct::LBracket, 1),
            (b']', _) => (Punct::RBracket, 1),
            (b':', _) => (Punct::Colon, 1),
            _ => {
                let ch = self.src[self.pos..].chars().next().unwrap_or('?');
                return Err(SyntaxError::new(
                    self.src,
                    Span::new(start, start + ch.len_utf8()),
                    format!("illegal character {ch:?}"),
                ));
            }
        };
        match p {
            Punct::LParen | Punct::LBracket => {
                self.open.push(start);
                if self.open.len() > super::MAX_NESTING {
                    return Err(self.err(start, "brackets are nested too deeply"));
                }
            }
            Punct::RParen | Punct::RBracket if self.open.pop().is_none() => {
                return Err(self.err(start, format!("unmatched `{}`", p.as_str())));
            }
            _ => {}
        }
        self.pos += len;
        self.push(TokenKind::Op(p), start, self.pos);
        Ok(())
    }
}
