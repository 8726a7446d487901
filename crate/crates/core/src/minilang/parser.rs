//! Recursive-descent parser for MJ methods.

use super::ast::*;
use super::lexer::{Token, TokenKind};
use super::ParseError;

pub(crate) struct Parser<'a> {
    tokens: &'a [Token],
    src_len: usize,
    pos: usize,
    next_stmt_id: usize,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(tokens: &'a [Token], src_len: usize) -> Self {
        Parser { tokens, src_len, pos: 0, next_stmt_id: 0 }
    }

    pub(crate) fn parse_method(mut self) -> Result<MethodAst, ParseError> {
        let return_type = self.type_keyword()?;
        let name = self.ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.peek_is(")") {
            loop {
                let ty = self.type_keyword()?;
                let pname = self.ident()?;
                params.push((pname, ty));
                if self.peek_is(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        let body = self.block()?;
        if self.pos != self.tokens.len() {
            return Err(self.error("end of input after method body"));
        }
        let mut ast = MethodAst { name, params, return_type, body };
        number_statements(&mut ast.body, &mut self.next_stmt_id);
        Ok(ast)
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_is(&self, lexeme: &str) -> bool {
        self.peek().is_some_and(|t| t.is(lexeme))
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.src_len, |t| t.span.0)
    }

    fn error(&self, expected: &str) -> ParseError {
        let found = self.peek().map_or("end of input".to_string(), |t| format!("`{}`", t.lexeme));
        ParseError::new(self.offset(), format!("expected {expected}, found {found}"))
    }

    fn expect(&mut self, lexeme: &str) -> Result<usize, ParseError> {
        if self.peek_is(lexeme) {
            self.pos += 1;
            Ok(self.pos - 1)
        } else {
            Err(self.error(&format!("`{lexeme}`")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident => {
                self.pos += 1;
                Ok(t.lexeme.clone())
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn type_keyword(&mut self) -> Result<MjType, ParseError> {
        match self.peek().and_then(|t| MjType::from_keyword(&t.lexeme)) {
            Some(ty) => {
                self.pos += 1;
                Ok(ty)
            }
            None => Err(self.error("type (`int`, `num` or `bool`)")),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect("{")?;
        let mut stmts = Vec::new();
        while !self.peek_is("}") {
            if self.peek().is_none() {
                return Err(self.error("`}`"));
            }
            stmts.push(self.statement()?);
        }
        self.expect("}")?;
        Ok(stmts)
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let first_tok = self.pos;
        let tok = self.peek().ok_or_else(|| self.error("statement"))?;
        let kind = if let Some(ty) = MjType::from_keyword(&tok.lexeme) {
            self.pos += 1;
            let name = self.ident()?;
            self.expect("=")?;
            let init = self.expr()?;
            self.expect(";")?;
            StmtKind::Decl { ty, name, init }
        } else if tok.is("if") {
            self.pos += 1;
            self.expect("(")?;
            let cond = self.expr()?;
            self.expect(")")?;
            let then_body = self.block()?;
            let else_body = if self.peek_is("else") {
                self.pos += 1;
                Some(self.block()?)
            } else {
                None
            };
            StmtKind::If { cond, then_body, else_body }
        } else if tok.is("while") {
            self.pos += 1;
            self.expect("(")?;
            let cond = self.expr()?;
            self.expect(")")?;
            let body = self.block()?;
            StmtKind::While { cond, body }
        } else if tok.is("return") {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(";")?;
            StmtKind::Return(e)
        } else if tok.kind == TokenKind::Ident {
            let name = self.ident()?;
            self.expect("=")?;
            let value = self.expr()?;
            self.expect(";")?;
            StmtKind::Assign { name, value }
        } else {
            return Err(self.error("statement"));
        };
        Ok(Stmt { id: usize::MAX, kind, first_tok, last_tok: self.pos - 1 })
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(t) if t.kind == TokenKind::Operator => match BinOp::from_symbol(&t.lexeme) {
                    Some(op) if op.precedence() >= min_prec => op,
                    _ => break,
                },
                _ => break,
            };
            let op_tok = self.pos;
            self.pos += 1;
            let rhs = self.binary(op.precedence() + 1)?;
            let first_tok = lhs.first_tok;
            let last_tok = rhs.last_tok;
            lhs = Expr {
                kind: ExprKind::Binary { op, op_tok, lhs: Box::new(lhs), rhs: Box::new(rhs) },
                first_tok,
                last_tok,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let first_tok = self.pos;
        let op = match self.peek() {
            Some(t) if t.is("-") => Some(UnaryOp::Neg),
            Some(t) if t.is("!") => Some(UnaryOp::Not),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let operand = self.unary()?;
            let last_tok = operand.last_tok;
            return Ok(Expr { kind: ExprKind::Unary { op, operand: Box::new(operand) }, first_tok, last_tok });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let first_tok = self.pos;
        let tok = self.peek().ok_or_else(|| self.error("expression"))?;
        let kind = match tok.kind {
            TokenKind::IntLit => {
                self.pos += 1;
                let v = tok
                    .lexeme
                    .parse::<i64>()
                    .map_err(|_| ParseError::new(tok.span.0, "integer literal out of range"))?;
                ExprKind::Lit(Value::Int(v))
            }
            TokenKind::NumLit => {
                self.pos += 1;
                let v = tok
                    .lexeme
                    .parse::<f64>()
                    .map_err(|_| ParseError::new(tok.span.0, "malformed num literal"))?;
                ExprKind::Lit(Value::Num(v))
            }
            TokenKind::BoolLit => {
                self.pos += 1;
                ExprKind::Lit(Value::Bool(tok.is("true")))
            }
            TokenKind::Ident => {
                self.pos += 1;
                if self.peek_is("(") {
                    self.pos += 1;
                    let mut args = Vec::new();
                    if !self.peek_is(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.peek_is(",") {
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(")")?;
                    ExprKind::Call { name: tok.lexeme.clone(), args }
                } else {
                    ExprKind::Var(tok.lexeme.clone())
                }
            }
            TokenKind::Keyword if tok.is("int") || tok.is("num") => {
                let ty = MjType::from_keyword(&tok.lexeme).expect("checked keyword");
                self.pos += 1;
                self.expect("(")?;
                let inner = self.expr()?;
                self.expect(")")?;
                ExprKind::Cast { ty, expr: Box::new(inner) }
            }
            TokenKind::Punct if tok.is("(") => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(")")?;
                ExprKind::Paren(Box::new(inner))
            }
            _ => return Err(self.error("expression")),
        };
        Ok(Expr { kind, first_tok, last_tok: self.pos - 1 })
    }
}

fn number_statements(stmts: &mut [Stmt], next: &mut usize) {
    for s in stmts {
        s.id = *next;
        *next += 1;
        match &mut s.kind {
            StmtKind::If { then_body, else_body, .. } => {
                number_statements(then_body, next);
                if let Some(e) = else_body {
                    number_statements(e, next);
                }
            }
            StmtKind::While { body, .. } => number_statements(body, next),
            _ => {}
        }
    }
}
