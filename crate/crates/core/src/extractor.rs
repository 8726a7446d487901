//! Method extraction: from an assertion-free unit test to the source text of
//! the program methods it invokes.
//!
//! MJ tests are flat call lists with literal arguments, so the analysis is a
//! static walk over the calls. Each directly invoked program method
//! contributes its whole text (signature and body) once, in order of first
//! invocation. Builtins such as `abs` are not part of the program under test
//! and are skipped.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::minilang::{is_builtin, Invocation, RuntimeErrorKind, SourceMethod, Token, Value};

/// An assertion-free unit test: an ordered list of invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTest {
    pub id: String,
    pub family: String,
    pub calls: Vec<Invocation>,
}

impl UnitTest {
    pub fn new(id: impl Into<String>, family: impl Into<String>, calls: Vec<Invocation>) -> Self {
        UnitTest { id: id.into(), family: family.into(), calls }
    }

    /// Canonical text of the call sequence, e.g. `f(0.5); g(1, true);`.
    pub fn source_text(&self) -> String {
        render_test_text(self)
    }

    /// Checks every call against the signatures in `program`.
    pub fn check_against(&self, program: &[SourceMethod]) -> Result<(), RuntimeErrorKind> {
        for call in &self.calls {
            if is_builtin(&call.method_name) {
                continue;
            }
            let m = program
                .iter()
                .find(|m| m.name == call.method_name)
                .ok_or(RuntimeErrorKind::AbsentMethod)?;
            let ok = m.params.len() == call.args.len()
                && m.params.iter().zip(&call.args).all(|((_, t), v)| *t == v.ty());
            if !ok {
                return Err(RuntimeErrorKind::ArityMismatch);
            }
        }
        Ok(())
    }
}

pub fn render_test_text(test: &UnitTest) -> String {
    test.calls
        .iter()
        .map(|c| {
            let args: Vec<String> = c.args.iter().map(Value::literal).collect();
            format!("{}({});", c.method_name, args.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Concatenated text of the methods a test invokes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedMut {
    pub concatenated_source: String,
    pub constituents: Vec<String>,
    pub tokens: Vec<Token>,
    /// Statement id per token, re-indexed across the concatenation.
    pub stmt_spans: Vec<usize>,
    /// First statement id of each constituent in the concatenation.
    pub stmt_offsets: Vec<usize>,
}

impl ExtractedMut {
    pub fn stmt_count(&self) -> usize {
        self.stmt_spans.iter().max().map_or(0, |m| m + 1)
    }

    pub fn lexemes(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.lexeme.as_str()).collect()
    }

    /// Statement-id offset of `method` in this extraction.
    pub fn offset_of(&self, method: &str) -> Option<usize> {
        self.constituents.iter().position(|c| c == method).map(|i| self.stmt_offsets[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("test invokes `{0}`, which is not in the program")]
    AbsentMethod(String),
}

/// Names of the distinct program methods `test` invokes, in order of first
/// invocation.
pub fn invoked_methods(test: &UnitTest) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for c in &test.calls {
        if !is_builtin(&c.method_name) && !seen.contains(&c.method_name) {
            seen.push(c.method_name.clone());
        }
    }
    seen
}

pub fn extract_mut(test: &UnitTest, program: &[SourceMethod]) -> Result<ExtractedMut, ExtractError> {
    let by_name: HashMap<&str, &SourceMethod> = program.iter().map(|m| (m.name.as_str(), m)).collect();
    let constituents = invoked_methods(test);
    let mut concatenated_source = String::new();
    let mut tokens = Vec::new();
    let mut stmt_spans = Vec::new();
    let mut stmt_offsets = Vec::new();
    let mut stmt_base = 0;
    for (i, name) in constituents.iter().enumerate() {
        let m = by_name.get(name.as_str()).ok_or_else(|| ExtractError::AbsentMethod(name.clone()))?;
        if i > 0 {
            concatenated_source.push('\n');
        }
        let byte_base = concatenated_source.len();
        concatenated_source.push_str(&m.source);
        tokens.extend(m.tokens.iter().map(|t| Token {
            lexeme: t.lexeme.clone(),
            kind: t.kind,
            span: (t.span.0 + byte_base, t.span.1 + byte_base),
        }));
        stmt_spans.extend(m.stmt_spans.iter().map(|s| s + stmt_base));
        stmt_offsets.push(stmt_base);
        stmt_base += m.stmt_count();
    }
    Ok(ExtractedMut { concatenated_source, constituents, tokens, stmt_spans, stmt_offsets })
}
