//! Deterministic, step-bounded evaluation of MJ programs.
//!
//! One step is charged per executed statement, per evaluated expression
//! node and per loop-condition check. `Int` arithmetic wraps on overflow;
//! `Num` arithmetic is plain IEEE-754 binary64 (round-to-nearest-even), so
//! `num` division by zero yields an infinity or NaN rather than an error.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::typecheck::is_builtin;
use super::SourceMethod;

pub const DEFAULT_STEP_LIMIT: u64 = 100_000;

/// Nested calls deeper than this are reported as `StepLimit`.
const MAX_CALL_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    #[serde(rename = "method")]
    pub method_name: String,
    pub args: Vec<Value>,
}

impl Invocation {
    pub fn new(method_name: impl Into<String>, args: Vec<Value>) -> Self {
        Invocation { method_name: method_name.into(), args }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuntimeErrorKind {
    DivByZero,
    StepLimit,
    AbsentMethod,
    ArityMismatch,
}

/// Observable behavior of a call list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EvalOutcome {
    Values(Vec<Value>),
    RuntimeError(RuntimeErrorKind),
}

impl EvalOutcome {
    /// Outcome equality for differential labeling. Values compare
    /// element-wise by [`Value::same_behavior`]; errors compare by kind.
    pub fn same_behavior(&self, other: &EvalOutcome) -> bool {
        match (self, other) {
            (EvalOutcome::Values(a), EvalOutcome::Values(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_behavior(y))
            }
            (EvalOutcome::RuntimeError(a), EvalOutcome::RuntimeError(b)) => a == b,
            _ => false,
        }
    }
}

/// Evaluates `calls` in order, each under a fresh environment, sharing one
/// step budget. Stops at the first runtime error.
pub fn evaluate(program: &[SourceMethod], calls: &[Invocation], step_limit: u64) -> EvalOutcome {
    let methods: HashMap<&str, &SourceMethod> = program.iter().map(|m| (m.name.as_str(), m)).collect();
    let mut machine = Machine { methods, steps: 0, step_limit, depth: 0 };
    let mut values = Vec::with_capacity(calls.len());
    for call in calls {
        match machine.call(&call.method_name, &call.args) {
            Ok(v) => values.push(v),
            Err(kind) => return EvalOutcome::RuntimeError(kind),
        }
    }
    EvalOutcome::Values(values)
}

struct Machine<'a> {
    methods: HashMap<&'a str, &'a SourceMethod>,
    steps: u64,
    step_limit: u64,
    depth: usize,
}

type Eval<T> = Result<T, RuntimeErrorKind>;

enum Flow {
    Next,
    Return(Value),
}

struct Frame {
    scopes: Vec<HashMap<String, Value>>,
}

impl Frame {
    fn get(&self, name: &str) -> Eval<Value> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name).copied())
            .ok_or(RuntimeErrorKind::ArityMismatch)
    }

    fn set(&mut self, name: &str, v: Value) -> Eval<()> {
        for scope in self.scopes.iter_mut().rev() {
            if let Some(slot) = scope.get_mut(name) {
                *slot = v;
                return Ok(());
            }
        }
        Err(RuntimeErrorKind::ArityMismatch)
    }
}

impl<'a> Machine<'a> {
    fn tick(&mut self) -> Eval<()> {
        self.steps += 1;
        if self.steps > self.step_limit {
            Err(RuntimeErrorKind::StepLimit)
        } else {
            Ok(())
        }
    }

    fn call(&mut self, name: &str, args: &[Value]) -> Eval<Value> {
        if is_builtin(name) {
            return match args {
                [Value::Int(v)] => Ok(Value::Int(v.wrapping_abs())),
                [Value::Num(v)] => Ok(Value::Num(v.abs())),
                _ => Err(RuntimeErrorKind::ArityMismatch),
            };
        }
        let method = *self.methods.get(name).ok_or(RuntimeErrorKind::AbsentMethod)?;
        if method.params.len() != args.len() || method.params.iter().zip(args).any(|((_, t), v)| *t != v.ty()) {
            return Err(RuntimeErrorKind::ArityMismatch);
        }
        if self.depth >= MAX_CALL_DEPTH {
            return Err(RuntimeErrorKind::StepLimit);
        }
        self.depth += 1;
        let params = method.params.iter().map(|(n, _)| n.clone()).zip(args.iter().copied()).collect();
        let mut frame = Frame { scopes: vec![params] };
        let flow = self.block(&method.ast.body, &mut frame);
        self.depth -= 1;
        match flow? {
            Flow::Return(v) if v.ty() == method.return_type => Ok(v),
            // Unreachable for typechecked methods.
            _ => Err(RuntimeErrorKind::ArityMismatch),
        }
    }

    fn block(&mut self, stmts: &[Stmt], frame: &mut Frame) -> Eval<Flow> {
        frame.scopes.push(HashMap::new());
        let mut result = Ok(Flow::Next);
        for s in stmts {
            match self.stmt(s, frame) {
                Ok(Flow::Next) => {}
                other => {
                    result = other;
                    break;
                }
            }
        }
        frame.scopes.pop();
        result
    }

    fn stmt(&mut self, s: &Stmt, frame: &mut Frame) -> Eval<Flow> {
        self.tick()?;
        match &s.kind {
            StmtKind::Decl { name, init, .. } => {
                let v = self.expr(init, frame)?;
                frame.scopes.last_mut().expect("scope").insert(name.clone(), v);
                Ok(Flow::Next)
            }
            StmtKind::Assign { name, value } => {
                let v = self.expr(value, frame)?;
                frame.set(name, v)?;
                Ok(Flow::Next)
            }
            StmtKind::If { cond, then_body, else_body } => {
                if self.truth(cond, frame)? {
                    self.block(then_body, frame)
                } else if let Some(e) = else_body {
                    self.block(e, frame)
                } else {
                    Ok(Flow::Next)
                }
            }
            StmtKind::While { cond, body } => {
                loop {
                    self.tick()?;
                    if !self.truth(cond, frame)? {
                        return Ok(Flow::Next);
                    }
                    if let Flow::Return(v) = self.block(body, frame)? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            StmtKind::Return(e) => Ok(Flow::Return(self.expr(e, frame)?)),
        }
    }

    fn truth(&mut self, e: &Expr, frame: &mut Frame) -> Eval<bool> {
        match self.expr(e, frame)? {
            Value::Bool(b) => Ok(b),
            _ => Err(RuntimeErrorKind::ArityMismatch),
        }
    }

    fn expr(&mut self, e: &Expr, frame: &mut Frame) -> Eval<Value> {
        self.tick()?;
        match &e.kind {
            ExprKind::Lit(v) => Ok(*v),
            ExprKind::Var(name) => frame.get(name),
            ExprKind::Paren(inner) => self.expr(inner, frame),
            ExprKind::Unary { op, operand } => {
                let v = self.expr(operand, frame)?;
                match (op, v) {
                    (UnaryOp::Neg, Value::Int(i)) => Ok(Value::Int(i.wrapping_neg())),
                    (UnaryOp::Neg, Value::Num(x)) => Ok(Value::Num(-x)),
                    (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    _ => Err(RuntimeErrorKind::ArityMismatch),
                }
            }
            ExprKind::Binary { op, lhs, rhs, .. } => {
                // Short-circuit logic operators.
                if matches!(op, BinOp::And | BinOp::Or) {
                    let l = self.truth(lhs, frame)?;
                    if (*op == BinOp::And && !l) || (*op == BinOp::Or && l) {
                        return Ok(Value::Bool(l));
                    }
                    return Ok(Value::Bool(self.truth(rhs, frame)?));
                }
                let l = self.expr(lhs, frame)?;
                let r = self.expr(rhs, frame)?;
                binary(*op, l, r)
            }
            ExprKind::Cast { ty, expr } => {
                let v = self.expr(expr, frame)?;
                match (ty, v) {
                    (MjType::Int, Value::Int(i)) => Ok(Value::Int(i)),
                    // Saturating; NaN becomes 0.
                    (MjType::Int, Value::Num(x)) => Ok(Value::Int(x as i64)),
                    (MjType::Num, Value::Int(i)) => Ok(Value::Num(i as f64)),
                    (MjType::Num, Value::Num(x)) => Ok(Value::Num(x)),
                    _ => Err(RuntimeErrorKind::ArityMismatch),
                }
            }
            ExprKind::Call { name, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.expr(a, frame)?);
                }
                self.call(name, &vals)
            }
        }
    }
}

fn binary(op: BinOp, l: Value, r: Value) -> Eval<Value> {
    use Value::*;
    Ok(match (l, r) {
        (Int(a), Int(b)) => match op {
            BinOp::Add => Int(a.wrapping_add(b)),
            BinOp::Sub => Int(a.wrapping_sub(b)),
            BinOp::Mul => Int(a.wrapping_mul(b)),
            BinOp::Div if b == 0 => return Err(RuntimeErrorKind::DivByZero),
            BinOp::Div => Int(a.wrapping_div(b)),
            BinOp::Rem if b == 0 => return Err(RuntimeErrorKind::DivByZero),
            BinOp::Rem => Int(a.wrapping_rem(b)),
            BinOp::Eq => Bool(a == b),
            BinOp::Ne => Bool(a != b),
            BinOp::Lt => Bool(a < b),
            BinOp::Le => Bool(a <= b),
            BinOp::Gt => Bool(a > b),
            BinOp::Ge => Bool(a >= b),
            BinOp::And | BinOp::Or => return Err(RuntimeErrorKind::ArityMismatch),
        },
        (Num(a), Num(b)) => match op {
            BinOp::Add => Num(a + b),
            BinOp::Sub => Num(a - b),
            BinOp::Mul => Num(a * b),
            BinOp::Div => Num(a / b),
            BinOp::Rem => Num(a % b),
            BinOp::Eq => Bool(a == b),
            BinOp::Ne => Bool(a != b),
            BinOp::Lt => Bool(a < b),
            BinOp::Le => Bool(a <= b),
            BinOp::Gt => Bool(a > b),
            BinOp::Ge => Bool(a >= b),
            BinOp::And | BinOp::Or => return Err(RuntimeErrorKind::ArityMismatch),
        },
        (Bool(a), Bool(b)) => match op {
            BinOp::Eq => Bool(a == b),
            BinOp::Ne => Bool(a != b),
            _ => return Err(RuntimeErrorKind::ArityMismatch),
        },
        _ => return Err(RuntimeErrorKind::ArityMismatch),
    })
}
