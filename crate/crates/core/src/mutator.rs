//! Mutation operators over MJ methods and the higher-order mutant (HOM)
//! generator.
//!
//! A [`Mutable`] names an operator and a site `(statement id, pre-order node
//! index within that statement's expression)` in the *original* method. Every
//! mutable lowers to token-level edits on the original token stream, so a
//! HOM is the original text with the edits of all its applied mutables. Two
//! mutables whose edits touch the same token conflict; the later one is
//! skipped because its site has already changed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::{
    parse_method_with, BinOp, Expr, ExprKind, SourceMethod, Signatures, StmtKind, Value,
};

/// Operators, in the order used to sort mutables at the same site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MutationOperator {
    /// Arithmetic operator replacement: `+`/`-`, `*`/`/`.
    Aor,
    /// Relational operator replacement: `<`/`<=`, `>`/`>=`, `==`/`!=`.
    Ror,
    /// Logical operator replacement: `&&`/`||`.
    Lor,
    /// Negate an `if`/`while` condition: `c` becomes `!(c)`.
    NegCond,
    /// Constant replacement: int `c` to `c+1`, num `c` to `-c`, bool `b` to `!b`.
    ConstRep,
    /// Int constant `c != 0` to `0`.
    ConstZero,
    /// Move the closing parenthesis of a call, cast or group that starts an
    /// operator chain to the end of that chain.
    ParenShift,
}

pub const ALL_OPERATORS: [MutationOperator; 7] = [
    MutationOperator::Aor,
    MutationOperator::Ror,
    MutationOperator::Lor,
    MutationOperator::NegCond,
    MutationOperator::ConstRep,
    MutationOperator::ConstZero,
    MutationOperator::ParenShift,
];

impl MutationOperator {
    pub fn name(self) -> &'static str {
        match self {
            MutationOperator::Aor => "AOR",
            MutationOperator::Ror => "ROR",
            MutationOperator::Lor => "LOR",
            MutationOperator::NegCond => "NegCond",
            MutationOperator::ConstRep => "ConstRep",
            MutationOperator::ConstZero => "ConstZero",
            MutationOperator::ParenShift => "ParenShift",
        }
    }
}

impl fmt::Display for MutationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutationOperator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_OPERATORS
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown mutation operator `{s}`"))
    }
}

impl Serialize for MutationOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MutationOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mutable {
    pub op: MutationOperator,
    pub stmt: usize,
    pub node: usize,
}

impl Mutable {
    pub fn new(op: MutationOperator, stmt: usize, node: usize) -> Self {
        Mutable { op, stmt, node }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutant {
    pub parent: String,
    pub source: String,
    pub applied: Vec<Mutable>,
    pub order: usize,
}

impl Mutant {
    /// Statement ids touched by the applied mutations.
    pub fn mutated_statements(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.applied.iter().map(|m| m.stmt).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutateError {
    #[error("{0:?} is not applicable to this method")]
    NotApplicable(Mutable),
    #[error("no mutation could be applied to `{0}`")]
    NoMutant(String),
}

/// Token-level rewrite against the original token stream.
#[derive(Debug, Clone, PartialEq)]
enum Edit {
    Replace { tok: usize, text: String },
    Delete { tok: usize },
    InsertBefore { tok: usize, text: String },
    /// `depth` orders insertions after the same token: lower goes first.
    InsertAfter { tok: usize, text: String, depth: u8 },
}

impl Edit {
    fn consumed_token(&self) -> Option<usize> {
        match self {
            Edit::Replace { tok, .. } | Edit::Delete { tok } => Some(*tok),
            _ => None,
        }
    }
}

struct NodeInfo<'a> {
    expr: &'a Expr,
    parent: Option<usize>,
}

fn flatten(root: &Expr) -> Vec<NodeInfo<'_>> {
    let mut out = Vec::new();
    let mut stack: Vec<(&Expr, Option<usize>)> = vec![(root, None)];
    while let Some((e, parent)) = stack.pop() {
        let idx = out.len();
        out.push(NodeInfo { expr: e, parent });
        for c in e.children().into_iter().rev() {
            stack.push((c, Some(idx)));
        }
    }
    out
}

fn is_lhs_of(nodes: &[NodeInfo<'_>], child: usize, parent: usize) -> Option<BinOp> {
    match &nodes[parent].expr.kind {
        ExprKind::Binary { op, lhs, .. } if std::ptr::eq(lhs.as_ref(), nodes[child].expr) => Some(*op),
        _ => None,
    }
}

/// Edits for `m` on `method`, or `None` if the operator does not match the
/// node at the site.
fn edits_for(method: &SourceMethod, m: &Mutable) -> Option<Vec<Edit>> {
    let stmts = method.ast.statements();
    let stmt = stmts.get(m.stmt)?;
    let nodes = flatten(stmt.expr());
    let info = nodes.get(m.node)?;
    let e = info.expr;
    let swap = |table: &[(BinOp, BinOp)], op: BinOp| {
        table.iter().find_map(|&(a, b)| if a == op { Some(b) } else if b == op { Some(a) } else { None })
    };
    match m.op {
        MutationOperator::Aor | MutationOperator::Ror | MutationOperator::Lor => {
            let ExprKind::Binary { op, op_tok, .. } = &e.kind else { return None };
            let table: &[(BinOp, BinOp)] = match m.op {
                MutationOperator::Aor => &[(BinOp::Add, BinOp::Sub), (BinOp::Mul, BinOp::Div)],
                MutationOperator::Ror => &[(BinOp::Lt, BinOp::Le), (BinOp::Gt, BinOp::Ge), (BinOp::Eq, BinOp::Ne)],
                _ => &[(BinOp::And, BinOp::Or)],
            };
            let to = swap(table, *op)?;
            Some(vec![Edit::Replace { tok: *op_tok, text: to.symbol().to_string() }])
        }
        MutationOperator::NegCond => {
            let is_cond = matches!(stmt.kind, StmtKind::If { .. } | StmtKind::While { .. });
            if !is_cond || m.node != 0 {
                return None;
            }
            Some(vec![
                Edit::InsertBefore { tok: e.first_tok, text: "!(".into() },
                Edit::InsertAfter { tok: e.last_tok, text: ")".into(), depth: 1 },
            ])
        }
        MutationOperator::ConstRep => {
            let ExprKind::Lit(v) = &e.kind else { return None };
            let text = match v {
                Value::Int(c) => c.checked_add(1)?.to_string(),
                Value::Num(_) => format!("-{}", method.tokens[e.first_tok].lexeme),
                Value::Bool(b) => (!b).to_string(),
            };
            Some(vec![Edit::Replace { tok: e.first_tok, text }])
        }
        MutationOperator::ConstZero => match &e.kind {
            ExprKind::Lit(Value::Int(c)) if *c != 0 => Some(vec![Edit::Replace { tok: e.first_tok, text: "0".into() }]),
            _ => None,
        },
        MutationOperator::ParenShift => {
            if !e.closes_with_paren() {
                return None;
            }
            let parent = info.parent?;
            let op = is_lhs_of(&nodes, m.node, parent)?;
            let prec = op.precedence();
            let mut root = parent;
            while let Some(up) = nodes[root].parent {
                match is_lhs_of(&nodes, root, up) {
                    Some(o) if o.precedence() == prec => root = up,
                    _ => break,
                }
            }
            debug_assert_eq!(method.tokens[e.last_tok].lexeme, ")");
            Some(vec![
                Edit::Delete { tok: e.last_tok },
                Edit::InsertAfter { tok: nodes[root].expr.last_tok, text: ")".into(), depth: 0 },
            ])
        }
    }
}

/// Applies `edits` to the original source, preserving inter-token text.
fn render(method: &SourceMethod, edits: &[Edit]) -> String {
    let src = &method.source;
    let toks = &method.tokens;
    // (byte position, class, depth, sequence, text, removed byte length)
    let mut ops: Vec<(usize, u8, u8, usize, &str, usize)> = Vec::new();
    for (seq, e) in edits.iter().enumerate() {
        match e {
            Edit::Replace { tok, text } => {
                let (a, b) = toks[*tok].span;
                ops.push((a, 2, 0, seq, text, b - a));
            }
            Edit::Delete { tok } => {
                let (a, b) = toks[*tok].span;
                ops.push((a, 2, 0, seq, "", b - a));
            }
            Edit::InsertAfter { tok, text, depth } => ops.push((toks[*tok].span.1, 0, *depth, seq, text, 0)),
            Edit::InsertBefore { tok, text } => ops.push((toks[*tok].span.0, 1, 0, seq, text, 0)),
        }
    }
    ops.sort_by_key(|&(pos, class, depth, seq, _, _)| (pos, class, depth, seq));
    let mut out = String::with_capacity(src.len() + 8);
    let mut cursor = 0;
    for (pos, _, _, _, text, removed) in ops {
        if pos >= cursor {
            out.push_str(&src[cursor..pos]);
            cursor = pos;
        }
        out.push_str(text);
        cursor += removed;
    }
    out.push_str(&src[cursor.min(src.len())..]);
    out
}

fn compiles(source: &str, sigs: &Signatures) -> bool {
    parse_method_with(source, sigs).is_ok()
}

/// Every `(op, site)` that yields a compilable first-order mutant, in order
/// of statement id, node index, then operator.
pub fn enumerate_mutables(method: &SourceMethod) -> Vec<Mutable> {
    enumerate_mutables_with(method, &Signatures::new())
}

pub fn enumerate_mutables_with(method: &SourceMethod, sigs: &Signatures) -> Vec<Mutable> {
    let mut out = Vec::new();
    for stmt in method.ast.statements() {
        let n_nodes = flatten(stmt.expr()).len();
        for node in 0..n_nodes {
            for op in ALL_OPERATORS {
                let m = Mutable::new(op, stmt.id, node);
                if let Some(edits) = edits_for(method, &m) {
                    if compiles(&render(method, &edits), sigs) {
                        out.push(m);
                    }
                }
            }
        }
    }
    out
}

/// Rewrites `method` with a single mutable; all other tokens are unchanged.
pub fn apply_mutable(method: &SourceMethod, m: &Mutable) -> Result<String, MutateError> {
    apply_mutables(method, std::slice::from_ref(m))
}

/// Source of `method` with every mutable in `ms` applied. Fails if any
/// mutable does not match its site or two mutables rewrite the same token.
pub fn apply_mutables(method: &SourceMethod, ms: &[Mutable]) -> Result<String, MutateError> {
    let mut all = Vec::new();
    for m in ms {
        let edits = edits_for(method, m).ok_or(MutateError::NotApplicable(*m))?;
        if conflicts(&all, &edits) {
            return Err(MutateError::NotApplicable(*m));
        }
        all.extend(edits);
    }
    Ok(render(method, &all))
}

fn conflicts(existing: &[Edit], new: &[Edit]) -> bool {
    new.iter()
        .filter_map(Edit::consumed_token)
        .any(|t| existing.iter().filter_map(Edit::consumed_token).any(|u| u == t))
}

/// Higher-order mutant generation over the method's mutables in
/// enumeration order.
///
/// Mutations accumulate until `order` have been applied or the mutables run
/// out. A mutable whose site was already rewritten is skipped. The first
/// mutation that leaves the method non-compilable is reverted and the
/// accumulated mutant is returned.
pub fn generate_hom(method: &SourceMethod, order: usize) -> Result<Mutant, MutateError> {
    let mutables = enumerate_mutables(method);
    hom_from(method, &mutables, order, &Signatures::new())
}

/// As [`generate_hom`], visiting the mutables in an order shuffled by `rng`.
pub fn generate_hom_shuffled<R: Rng + ?Sized>(
    method: &SourceMethod,
    order: usize,
    rng: &mut R,
) -> Result<Mutant, MutateError> {
    let mut mutables = enumerate_mutables(method);
    mutables.shuffle(rng);
    hom_from(method, &mutables, order, &Signatures::new())
}

/// Core accumulation loop over an explicit visit order.
pub fn hom_from(
    method: &SourceMethod,
    visit: &[Mutable],
    order: usize,
    sigs: &Signatures,
) -> Result<Mutant, MutateError> {
    let mut applied: Vec<Mutable> = Vec::new();
    let mut edits: Vec<Edit> = Vec::new();
    let mut source = method.source.clone();
    for m in visit {
        if applied.len() >= order {
            break;
        }
        let Some(new) = edits_for(method, m) else { continue };
        if conflicts(&edits, &new) {
            continue;
        }
        let mut candidate = edits.clone();
        candidate.extend(new);
        let text = render(method, &candidate);
        if !compiles(&text, sigs) {
            break;
        }
        edits = candidate;
        source = text;
        applied.push(*m);
    }
    if applied.is_empty() || source == method.source {
        return Err(MutateError::NoMutant(method.name.clone()));
    }
    Ok(Mutant { parent: method.name.clone(), source, order: applied.len(), applied })
}

/// Up to `per_method` distinct HOMs with requested orders cycling through
/// `1..=max_order`, each from an independently shuffled visit order.
pub fn sample_mutants<R: Rng + ?Sized>(
    method: &SourceMethod,
    max_order: usize,
    per_method: usize,
    rng: &mut R,
) -> Vec<Mutant> {
    let mutables = enumerate_mutables(method);
    let mut out: Vec<Mutant> = Vec::new();
    if mutables.is_empty() || max_order == 0 {
        return out;
    }
    let attempts = per_method * 8;
    for i in 0..attempts {
        if out.len() >= per_method {
            break;
        }
        let mut visit = mutables.clone();
        visit.shuffle(rng);
        let order = 1 + i % max_order;
        if let Ok(m) = hom_from(method, &visit, order, &Signatures::new()) {
            if !out.iter().any(|o| o.source == m.source) {
                out.push(m);
            }
        }
    }
    out
}
