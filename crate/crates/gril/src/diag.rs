//! Diagnostics: source spans and the error values surfaced to reports.

use std::fmt;

/// A position in a source file, 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Kinds of undefined behaviour the symbolic executor can prove reachable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UbKind {
    ReadUninit,
    DoubleFree,
    OutOfBounds,
    InvalidFree,
    UseAfterFree,
}

impl fmt::Display for UbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UbKind::ReadUninit => "read of uninitialized memory",
            UbKind::DoubleFree => "double free",
            UbKind::OutOfBounds => "out-of-bounds access",
            UbKind::InvalidFree => "free of a non-root or unknown address",
            UbKind::UseAfterFree => "use after free",
        };
        f.write_str(s)
    }
}

/// A single diagnostic, rendered as `file:line:col: message`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn new(file: impl Into<String>, span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            file: file.into(),
            span,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.span, self.message)
    }
}

/// Parse-stage error. Fatal: the CLI maps it to exit code 3.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{file}:{span}: {message}")]
pub struct ParseError {
    pub file: String,
    pub span: Span,
    pub message: String,
}

impl ParseError {
    pub fn new(file: impl Into<String>, span: Span, message: impl Into<String>) -> Self {
        ParseError {
            file: file.into(),
            span,
            message: message.into(),
        }
    }
}
