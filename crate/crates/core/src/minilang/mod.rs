//! MJ: a small typed, Java-flavored method language.
//!
//! Methods only (no classes or fields). Statements are declaration,
//! assignment, `if`/`else`, `while` and `return`; expressions cover
//! arithmetic, comparisons, logic, unary minus, parentheses, explicit
//! `int(..)`/`num(..)` casts, calls to corpus methods and the builtin `abs`.
//! There is no implicit coercion between `int` and `num`.

pub mod ast;
pub mod interp;
pub mod lexer;
mod parser;
pub mod print;
pub mod typecheck;

use serde::Serialize;
use thiserror::Error;

pub use ast::{BinOp, Expr, ExprKind, MethodAst, MjType, Stmt, StmtKind, UnaryOp, Value};
pub use interp::{evaluate, EvalOutcome, Invocation, RuntimeErrorKind, DEFAULT_STEP_LIMIT};
pub use lexer::{lex, Token, TokenKind};
pub use print::{print_expr, print_method};
pub use typecheck::{is_builtin, signature_of, Signature, Signatures};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError { offset, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("type error{}: {message}", stmt.map(|s| format!(" in statement {s}")).unwrap_or_default())]
pub struct TypeError {
    /// Offending statement id, when one exists.
    pub stmt: Option<usize>,
    pub message: String,
}

impl TypeError {
    pub fn new(stmt: Option<usize>, message: impl Into<String>) -> Self {
        TypeError { stmt, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MjError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// A parsed and typechecked method together with its token stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMethod {
    pub name: String,
    pub params: Vec<(String, MjType)>,
    pub return_type: MjType,
    pub source: String,
    pub ast: MethodAst,
    pub tokens: Vec<Token>,
    /// Statement id of every token, indexed like `tokens`.
    pub stmt_spans: Vec<usize>,
}

impl SourceMethod {
    pub fn stmt_count(&self) -> usize {
        self.ast.statements().len()
    }

    pub fn signature(&self) -> Signature {
        signature_of(&self.ast)
    }

    /// Token indices belonging to statement `id`.
    pub fn stmt_tokens(&self, id: usize) -> Vec<usize> {
        self.stmt_spans.iter().enumerate().filter(|(_, s)| **s == id).map(|(i, _)| i).collect()
    }
}

/// Parses and typechecks a standalone method. Calls may target the method
/// itself and the builtin `abs`.
pub fn parse_method(source: &str) -> Result<SourceMethod, MjError> {
    parse_method_with(source, &Signatures::new())
}

/// Like [`parse_method`], with extra callable signatures in scope.
pub fn parse_method_with(source: &str, sigs: &Signatures) -> Result<SourceMethod, MjError> {
    let (ast, tokens) = parse_syntax(source)?;
    let mut scope = sigs.clone();
    scope.insert(ast.name.clone(), signature_of(&ast));
    typecheck::check_method(&ast, &scope)?;
    let stmt_spans = statement_spans(&ast, tokens.len());
    Ok(SourceMethod {
        name: ast.name.clone(),
        params: ast.params.clone(),
        return_type: ast.return_type,
        source: source.to_string(),
        ast,
        tokens,
        stmt_spans,
    })
}

/// Lexes and parses without typechecking.
pub fn parse_syntax(source: &str) -> Result<(MethodAst, Vec<Token>), ParseError> {
    let tokens = lex(source)?;
    let ast = parser::Parser::new(&tokens, source.len()).parse_method()?;
    Ok((ast, tokens))
}

/// Whether `source` parses and typechecks (the compilability check used by
/// the mutant generator).
pub fn is_compilable(source: &str, sigs: &Signatures) -> bool {
    parse_method_with(source, sigs).is_ok()
}

/// Tokens in source order with the statement id of each token.
pub fn tokenize_with_statements(method: &SourceMethod) -> (Vec<Token>, Vec<usize>) {
    (method.tokens.clone(), method.stmt_spans.clone())
}

/// Tokens and per-token statement ids of a concatenation of methods, with
/// statement ids numbered consecutively across methods. Only syntax is
/// checked.
pub fn program_statement_spans(source: &str) -> Result<(Vec<Token>, Vec<usize>), ParseError> {
    let tokens = lex(source)?;
    let mut spans = Vec::with_capacity(tokens.len());
    let mut start = 0;
    let mut depth = 0usize;
    let mut base = 0;
    for (i, t) in tokens.iter().enumerate() {
        match t.lexeme.as_str() {
            "{" => depth += 1,
            "}" => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    let chunk = &tokens[start..=i];
                    let ast = parser::Parser::new(chunk, source.len()).parse_method()?;
                    spans.extend(statement_spans(&ast, chunk.len()).into_iter().map(|s| s + base));
                    base += ast.statements().len();
                    start = i + 1;
                }
            }
            _ => {}
        }
    }
    if start != tokens.len() {
        let offset = tokens[start].span.0;
        return Err(ParseError::new(offset, "trailing tokens after last method"));
    }
    Ok((tokens, spans))
}

/// Splits `source` into the source text of each top-level method.
pub fn split_methods(source: &str) -> Result<Vec<&str>, ParseError> {
    let tokens = lex(source)?;
    let mut out = Vec::new();
    let mut start = None;
    let mut depth = 0usize;
    for t in &tokens {
        start.get_or_insert(t.span.0);
        match t.lexeme.as_str() {
            "{" => depth += 1,
            "}" => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    out.push(&source[start.take().unwrap_or(0)..t.span.1]);
                }
            }
            _ => {}
        }
    }
    match start {
        Some(offset) => Err(ParseError::new(offset, "trailing tokens after last method")),
        None => Ok(out),
    }
}

/// Parses and typechecks every method of a multi-method source; methods may
/// call each other regardless of order.
pub fn parse_program(source: &str) -> Result<Vec<SourceMethod>, MjError> {
    let parts = split_methods(source)?;
    let mut sigs = Signatures::new();
    for part in &parts {
        let (ast, _) = parse_syntax(part)?;
        if sigs.insert(ast.name.clone(), signature_of(&ast)).is_some() {
            return Err(TypeError::new(None, format!("method `{}` is defined twice", ast.name)).into());
        }
    }
    parts.iter().map(|part| parse_method_with(part, &sigs)).collect()
}

/// Maps each token to the innermost statement containing it. Header tokens
/// (signature and opening brace) belong to the first statement, the closing
/// brace to the last top-level statement.
fn statement_spans(ast: &MethodAst, n_tokens: usize) -> Vec<usize> {
    let mut spans = vec![0usize; n_tokens];
    for s in ast.statements() {
        for slot in &mut spans[s.first_tok..=s.last_tok] {
            *slot = s.id;
        }
    }
    if let Some(last) = ast.body.last() {
        for slot in &mut spans[last.last_tok + 1..] {
            *slot = last.id;
        }
    }
    spans
}
