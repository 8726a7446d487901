//! Static typing for MJ methods.

use std::collections::HashMap;

use super::ast::*;
use super::TypeError;

/// Method signature: parameter types and return type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub params: Vec<MjType>,
    pub ret: MjType,
}

/// Signatures visible to a method being checked (besides the builtin `abs`).
pub type Signatures = HashMap<String, Signature>;

pub const BUILTINS: &[&str] = &["abs"];

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

pub fn signature_of(ast: &MethodAst) -> Signature {
    Signature { params: ast.params.iter().map(|(_, t)| *t).collect(), ret: ast.return_type }
}

struct Checker<'a> {
    sigs: &'a Signatures,
    scopes: Vec<HashMap<String, MjType>>,
    ret: MjType,
}

pub fn check_method(ast: &MethodAst, sigs: &Signatures) -> Result<(), TypeError> {
    let mut params = HashMap::new();
    for (name, ty) in &ast.params {
        if params.insert(name.clone(), *ty).is_some() {
            return Err(TypeError::new(None, format!("duplicate parameter `{name}`")));
        }
    }
    let mut ck = Checker { sigs, scopes: vec![params], ret: ast.return_type };
    ck.block(&ast.body)?;
    if !always_returns(&ast.body) {
        let last = ast.statements().last().map(|s| s.id);
        return Err(TypeError::new(last, format!("method `{}` is missing a return on some path", ast.name)));
    }
    Ok(())
}

/// Whether every path through `stmts` ends in `return`.
pub fn always_returns(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|s| match &s.kind {
        StmtKind::Return(_) => true,
        StmtKind::If { then_body, else_body: Some(else_body), .. } => {
            always_returns(then_body) && always_returns(else_body)
        }
        _ => false,
    })
}

impl Checker<'_> {
    fn lookup(&self, name: &str) -> Option<MjType> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), TypeError> {
        self.scopes.push(HashMap::new());
        for s in stmts {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), TypeError> {
        let at = Some(s.id);
        match &s.kind {
            StmtKind::Decl { ty, name, init } => {
                let t = self.expr(init).map_err(|m| TypeError::new(at, m))?;
                if t != *ty {
                    return Err(TypeError::new(at, format!("cannot initialize {ty} `{name}` with {t}")));
                }
                if self.lookup(name).is_some() {
                    return Err(TypeError::new(at, format!("`{name}` is already declared")));
                }
                self.scopes.last_mut().expect("scope").insert(name.clone(), *ty);
            }
            StmtKind::Assign { name, value } => {
                let target = self.lookup(name).ok_or_else(|| TypeError::new(at, format!("unknown variable `{name}`")))?;
                let t = self.expr(value).map_err(|m| TypeError::new(at, m))?;
                if t != target {
                    return Err(TypeError::new(at, format!("cannot assign {t} to {target} `{name}`")));
                }
            }
            StmtKind::If { cond, then_body, else_body } => {
                self.condition(cond, at)?;
                self.block(then_body)?;
                if let Some(e) = else_body {
                    self.block(e)?;
                }
            }
            StmtKind::While { cond, body } => {
                self.condition(cond, at)?;
                self.block(body)?;
            }
            StmtKind::Return(e) => {
                let t = self.expr(e).map_err(|m| TypeError::new(at, m))?;
                if t != self.ret {
                    return Err(TypeError::new(at, format!("returning {t} from a {} method", self.ret)));
                }
            }
        }
        Ok(())
    }

    fn condition(&mut self, cond: &Expr, at: Option<usize>) -> Result<(), TypeError> {
        match self.expr(cond).map_err(|m| TypeError::new(at, m))? {
            MjType::Bool => Ok(()),
            t => Err(TypeError::new(at, format!("condition must be bool, found {t}"))),
        }
    }

    fn expr(&self, e: &Expr) -> Result<MjType, String> {
        match &e.kind {
            ExprKind::Lit(v) => Ok(v.ty()),
            ExprKind::Var(name) => self.lookup(name).ok_or_else(|| format!("unknown variable `{name}`")),
            ExprKind::Paren(inner) => self.expr(inner),
            ExprKind::Unary { op, operand } => {
                let t = self.expr(operand)?;
                match (op, t) {
                    (UnaryOp::Neg, MjType::Int | MjType::Num) => Ok(t),
                    (UnaryOp::Not, MjType::Bool) => Ok(t),
                    _ => Err(format!("operator `{}` cannot apply to {t}", op.symbol())),
                }
            }
            ExprKind::Binary { op, lhs, rhs, .. } => {
                let (l, r) = (self.expr(lhs)?, self.expr(rhs)?);
                if l != r {
                    return Err(format!("operands of `{}` have different types ({l} and {r})", op.symbol()));
                }
                let numeric = matches!(l, MjType::Int | MjType::Num);
                match op {
                    BinOp::Or | BinOp::And if l == MjType::Bool => Ok(MjType::Bool),
                    BinOp::Eq | BinOp::Ne => Ok(MjType::Bool),
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge if numeric => Ok(MjType::Bool),
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem if numeric => Ok(l),
                    _ => Err(format!("operator `{}` cannot apply to {l}", op.symbol())),
                }
            }
            ExprKind::Cast { ty, expr } => match self.expr(expr)? {
                MjType::Int | MjType::Num => Ok(*ty),
                t => Err(format!("cannot cast {t} to {ty}")),
            },
            ExprKind::Call { name, args } => {
                let arg_tys = args.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>, _>>()?;
                if is_builtin(name) {
                    return match arg_tys.as_slice() {
                        [t @ (MjType::Int | MjType::Num)] => Ok(*t),
                        _ => Err(format!("`abs` expects one int or num argument, found {arg_tys:?}")),
                    };
                }
                let sig = self.sigs.get(name).ok_or_else(|| format!("unknown method `{name}`"))?;
                if sig.params != arg_tys {
                    return Err(format!("call to `{name}` expects {:?}, found {arg_tys:?}", sig.params));
                }
                Ok(sig.ret)
            }
        }
    }
}
