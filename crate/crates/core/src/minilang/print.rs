//! Canonical pretty-printer. Output re-parses to the same tree.

use std::fmt::Write;

use super::ast::*;

pub fn print_method(ast: &MethodAst) -> String {
    let mut out = String::new();
    let params: Vec<String> = ast.params.iter().map(|(n, t)| format!("{t} {n}")).collect();
    let _ = writeln!(out, "{} {}({}) {{", ast.return_type, ast.name, params.join(", "));
    print_block_body(&ast.body, 1, &mut out);
    out.push('}');
    out.push('\n');
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn print_block_body(stmts: &[Stmt], level: usize, out: &mut String) {
    for s in stmts {
        print_stmt(s, level, out);
    }
}

fn print_stmt(s: &Stmt, level: usize, out: &mut String) {
    indent(level, out);
    match &s.kind {
        StmtKind::Decl { ty, name, init } => {
            let _ = writeln!(out, "{ty} {name} = {};", print_expr(init));
        }
        StmtKind::Assign { name, value } => {
            let _ = writeln!(out, "{name} = {};", print_expr(value));
        }
        StmtKind::Return(e) => {
            let _ = writeln!(out, "return {};", print_expr(e));
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while ({}) {{", print_expr(cond));
            print_block_body(body, level + 1, out);
            indent(level, out);
            out.push_str("}\n");
        }
        StmtKind::If { cond, then_body, else_body } => {
            let _ = writeln!(out, "if ({}) {{", print_expr(cond));
            print_block_body(then_body, level + 1, out);
            indent(level, out);
            match else_body {
                Some(e) => {
                    out.push_str("} else {\n");
                    print_block_body(e, level + 1, out);
                    indent(level, out);
                    out.push_str("}\n");
                }
                None => out.push_str("}\n"),
            }
        }
    }
}

pub fn print_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Lit(v) => v.literal(),
        ExprKind::Var(n) => n.clone(),
        ExprKind::Unary { op, operand } => format!("{}{}", op.symbol(), print_expr(operand)),
        ExprKind::Binary { op, lhs, rhs, .. } => {
            format!("{} {} {}", print_expr(lhs), op.symbol(), print_expr(rhs))
        }
        ExprKind::Paren(inner) => format!("({})", print_expr(inner)),
        ExprKind::Call { name, args } => {
            let args: Vec<String> = args.iter().map(print_expr).collect();
            format!("{name}({})", args.join(", "))
        }
        ExprKind::Cast { ty, expr } => format!("{ty}({})", print_expr(expr)),
    }
}
