//! Tokenizer for MJ source text.

use serde::{Deserialize, Serialize};

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Ident,
    Keyword,
    IntLit,
    NumLit,
    BoolLit,
    Operator,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub lexeme: String,
    pub kind: TokenKind,
    /// Byte offsets `[start, end)` into the lexed text.
    pub span: (usize, usize),
}

impl Token {
    pub fn is(&self, lexeme: &str) -> bool {
        self.lexeme == lexeme
    }
}

pub const KEYWORDS: &[&str] = &["int", "num", "bool", "if", "else", "while", "return"];

const TWO_CHAR_OPS: &[&str] = &["<=", ">=", "==", "!=", "&&", "||"];
const ONE_CHAR_OPS: &[char] = &['+', '-', '*', '/', '%', '<', '>', '!', '='];
const PUNCT: &[char] = &['(', ')', '{', '}', ',', ';'];

/// Splits `src` into tokens. Whitespace and `//` line comments are skipped.
pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let kind = match word {
                "true" | "false" => TokenKind::BoolLit,
                w if KEYWORDS.contains(&w) => TokenKind::Keyword,
                _ => TokenKind::Ident,
            };
            tokens.push(Token { lexeme: word.to_string(), kind, span: (start, i) });
            continue;
        }
        if c.is_ascii_digit() {
            let (end, is_num) = scan_number(bytes, i);
            i = end;
            let text = &src[start..i];
            if !is_num && text.parse::<i64>().is_err() {
                return Err(ParseError::new(start, format!("integer literal `{text}` out of range")));
            }
            let kind = if is_num { TokenKind::NumLit } else { TokenKind::IntLit };
            tokens.push(Token { lexeme: text.to_string(), kind, span: (start, i) });
            continue;
        }
        if i + 1 < bytes.len() {
            let pair = &src[i..i + 2];
            if TWO_CHAR_OPS.contains(&pair) {
                tokens.push(Token { lexeme: pair.to_string(), kind: TokenKind::Operator, span: (i, i + 2) });
                i += 2;
                continue;
            }
        }
        if ONE_CHAR_OPS.contains(&c) {
            tokens.push(Token { lexeme: c.to_string(), kind: TokenKind::Operator, span: (i, i + 1) });
            i += 1;
            continue;
        }
        if PUNCT.contains(&c) {
            tokens.push(Token { lexeme: c.to_string(), kind: TokenKind::Punct, span: (i, i + 1) });
            i += 1;
            continue;
        }
        let ch = src[i..].chars().next().unwrap_or('?');
        return Err(ParseError::new(i, format!("unexpected character `{ch}`")));
    }
    Ok(tokens)
}

/// Returns the end offset and whether the literal is a `num` (has a
/// fraction or exponent).
fn scan_number(bytes: &[u8], mut i: usize) -> (usize, bool) {
    let digits = |b: &[u8], mut j: usize| {
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        j
    };
    i = digits(bytes, i);
    let mut is_num = false;
    if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i = digits(bytes, i + 1);
        is_num = true;
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(bytes.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        if bytes.get(j).is_some_and(u8::is_ascii_digit) {
            i = digits(bytes, j);
            is_num = true;
        }
    }
    (i, is_num)
}
