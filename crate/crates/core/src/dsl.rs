//! Character cursor shared by the process-description and BioFlow parsers.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A positioned parse or semantic error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    /// What would have been accepted here; empty for semantic errors.
    pub expected: Vec<String>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostic {}

pub struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '(' | ')' | ',' | ';')
}

impl<'a> Cursor<'a> {
    pub fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    /// 1-based line and column (in characters) of a byte offset.
    pub fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rsplit('\n').next().unwrap_or("").chars().count() + 1;
        (line, col)
    }

    pub fn error_at(&self, offset: usize, message: impl Into<String>, expected: &[&str]) -> Diagnostic {
        let (line, column) = self.line_col(offset);
        Diagnostic {
            line,
            column,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Error at the next token.
    pub fn error(&mut self, expected: &[&str]) -> Diagnostic {
        self.skip_ws();
        let found = match self.rest().chars().next() {
            None => "end of input".to_string(),
            Some(c) if is_word_char(c) => {
                let w: String = self.rest().chars().take_while(|c| is_word_char(*c)).take(24).collect();
                format!("`{w}`")
            }
            Some(c) => format!("`{c}`"),
        };
        self.error_at(self.pos, format!("unexpected {found}"), expected)
    }

    pub fn skip_ws(&mut self) {
        loop {
            let trimmed = self.rest().trim_start();
            self.pos = self.src.len() - trimmed.len();
            // `--` line comments
            if trimmed.starts_with("--") {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    pub fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.src.len()
    }

    fn peek_ident_span(&mut self) -> Option<(usize, usize)> {
        self.skip_ws();
        let mut chars = self.rest().char_indices();
        let (_, first) = chars.next()?;
        if !is_ident_start(first) {
            return None;
        }
        let len = chars
            .find(|(_, c)| !is_ident_char(*c))
            .map(|(i, _)| i)
            .unwrap_or(self.rest().len());
        Some((self.pos, self.pos + len))
    }

    /// Whether the next token is the keyword `kw` (case-insensitive).
    pub fn peek_keyword(&mut self, kw: &str) -> bool {
        self.peek_ident_span()
            .is_some_and(|(s, e)| self.src[s..e].eq_ignore_ascii_case(kw))
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        match self.peek_ident_span() {
            Some((s, e)) if self.src[s..e].eq_ignore_ascii_case(kw) => {
                self.pos = e;
                true
            }
            _ => false,
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), Diagnostic> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    /// An identifier; returns it with its start offset.
    pub fn ident(&mut self, what: &str) -> Result<(String, usize), Diagnostic> {
        match self.peek_ident_span() {
            Some((s, e)) => {
                self.pos = e;
                Ok((self.src[s..e].to_string(), s))
            }
            None => Err(self.error(&[what])),
        }
    }

    /// A run of characters up to whitespace or one of `( ) , ;` (URLs, paths).
    pub fn word(&mut self, what: &str) -> Result<(String, usize), Diagnostic> {
        self.skip_ws();
        let len = self.rest().find(|c: char| !is_word_char(c)).unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.error(&[what]));
        }
        let start = self.pos;
        self.pos += len;
        Ok((self.src[start..self.pos].to_string(), start))
    }

    pub fn peek_punct(&mut self, c: char) -> bool {
        self.skip_ws();
        self.rest().starts_with(c)
    }

    pub fn eat_punct(&mut self, c: char) -> bool {
        if self.peek_punct(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, c: char) -> Result<(), Diagnostic> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.error(&[&format!("`{c}`")]))
        }
    }

    /// A single-quoted string; `''` escapes a quote.
    pub fn string_literal(&mut self) -> Result<Option<String>, Diagnostic> {
        self.skip_ws();
        if !self.rest().starts_with('\'') {
            return Ok(None);
        }
        let start = self.pos;
        let mut out = String::new();
        let mut chars = self.rest()[1..].char_indices();
        while let Some((i, c)) = chars.next() {
            if c == '\'' {
                if self.rest()[1 + i + 1..].starts_with('\'') {
                    out.push('\'');
                    chars.next();
                    continue;
                }
                self.pos += 1 + i + 1;
                return Ok(Some(out));
            }
            out.push(c);
        }
        Err(self.error_at(start, "unterminated string literal", &["`'`"]))
    }

    /// An optionally signed decimal number, returned as written.
    pub fn number(&mut self) -> Option<String> {
        self.skip_ws();
        let rest = self.rest();
        let body = rest.strip_prefix('-').unwrap_or(rest);
        let digits = body.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(body.len());
        if digits == 0 || !body[..digits].starts_with(|c: char| c.is_ascii_digit()) {
            return None;
        }
        let len = rest.len() - body.len() + digits;
        let text = rest[..len].to_string();
        text.parse::<f64>().ok()?;
        self.pos += len;
        Some(text)
    }
}

/// Quotes a string literal for output.
pub fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}
