//! Syntax tree for MJ methods.
//!
//! Every node remembers the inclusive range of token indices it was parsed
//! from, so mutation operators can rewrite source text token by token.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MjType {
    Int,
    Num,
    Bool,
}

impl MjType {
    pub fn keyword(self) -> &'static str {
        match self {
            MjType::Int => "int",
            MjType::Num => "num",
            MjType::Bool => "bool",
        }
    }

    pub fn from_keyword(kw: &str) -> Option<MjType> {
        match kw {
            "int" => Some(MjType::Int),
            "num" => Some(MjType::Num),
            "bool" => Some(MjType::Bool),
            _ => None,
        }
    }
}

impl fmt::Display for MjType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A runtime value. `Num` is IEEE-754 binary64.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Num(f64),
}

impl Value {
    pub fn ty(&self) -> MjType {
        match self {
            Value::Int(_) => MjType::Int,
            Value::Num(_) => MjType::Num,
            Value::Bool(_) => MjType::Bool,
        }
    }

    /// Equality used for differential labeling: numbers compare by bit
    /// pattern with `-0.0` folded onto `0.0`, so NaN equals NaN and a signed
    /// zero is still zero.
    pub fn same_behavior(&self, other: &Value) -> bool {
        let bits = |x: f64| if x == 0.0 { 0 } else { x.to_bits() };
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Num(a), Value::Num(b)) => bits(*a) == bits(*b),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            _ => false,
        }
    }

    /// Canonical literal text. `Num` always carries a fraction or exponent
    /// so it re-lexes as a `num` literal.
    pub fn literal(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Num(v) => format!("{v:?}"),
            Value::Bool(v) => v.to_string(),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.same_behavior(other)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<BinOp> {
        Some(match sym {
            "||" => BinOp::Or,
            "&&" => BinOp::And,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            _ => return None,
        })
    }

    /// Binding strength; higher binds tighter. All binary operators are
    /// left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Not,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Not => "!",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    /// Inclusive token range.
    pub first_tok: usize,
    pub last_tok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Lit(Value),
    Var(String),
    Unary { op: UnaryOp, operand: Box<Expr> },
    Binary { op: BinOp, op_tok: usize, lhs: Box<Expr>, rhs: Box<Expr> },
    Paren(Box<Expr>),
    /// Call of a corpus method or the builtin `abs`.
    Call { name: String, args: Vec<Expr> },
    Cast { ty: MjType, expr: Box<Expr> },
}

impl Expr {
    /// Whether this node ends with a `)` it owns (call, cast or grouping).
    pub fn closes_with_paren(&self) -> bool {
        matches!(self.kind, ExprKind::Paren(_) | ExprKind::Call { .. } | ExprKind::Cast { .. })
    }

    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Lit(_) | ExprKind::Var(_) => vec![],
            ExprKind::Unary { operand, .. } => vec![operand],
            ExprKind::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            ExprKind::Paren(e) | ExprKind::Cast { expr: e, .. } => vec![e],
            ExprKind::Call { args, .. } => args.iter().collect(),
        }
    }

    /// Pre-order traversal of this expression tree.
    pub fn preorder(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            out.push(e);
            for c in e.children().into_iter().rev() {
                stack.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    /// Pre-order statement id within the method, contiguous from 0.
    pub id: usize,
    pub kind: StmtKind,
    pub first_tok: usize,
    pub last_tok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Decl { ty: MjType, name: String, init: Expr },
    Assign { name: String, value: Expr },
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Option<Vec<Stmt>> },
    While { cond: Expr, body: Vec<Stmt> },
    Return(Expr),
}

impl Stmt {
    /// The expression owned directly by this statement (not by nested ones).
    pub fn expr(&self) -> &Expr {
        match &self.kind {
            StmtKind::Decl { init, .. } => init,
            StmtKind::Assign { value, .. } => value,
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => cond,
            StmtKind::Return(e) => e,
        }
    }

    pub fn nested(&self) -> Vec<&Stmt> {
        match &self.kind {
            StmtKind::If { then_body, else_body, .. } => {
                then_body.iter().chain(else_body.iter().flatten()).collect()
            }
            StmtKind::While { body, .. } => body.iter().collect(),
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodAst {
    pub name: String,
    pub params: Vec<(String, MjType)>,
    pub return_type: MjType,
    pub body: Vec<Stmt>,
}

impl MethodAst {
    /// All statements in pre-order; index equals statement id.
    pub fn statements(&self) -> Vec<&Stmt> {
        fn walk<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Stmt>) {
            for s in stmts {
                out.push(s);
                for n in s.nested() {
                    walk(std::slice::from_ref(n), out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }
}
