//! Canonical source rendering: two-space indentation, minimal parentheses.

use super::ast::*;

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_NOT: u8 = 3;
const PREC_CMP: u8 = 4;
const PREC_ADD: u8 = 5;
const PREC_MUL: u8 = 6;
const PREC_NEG: u8 = 7;
const PREC_POSTFIX: u8 = 8;
const PREC_ATOM: u8 = 9;

pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    block(&mut out, &program.statements, 0);
    out
}

/// Renders a single expression.
pub fn expr_to_string(e: &Expr) -> String {
    let mut out = String::new();
    expr(&mut out, e);
    out
}

fn block(out: &mut String, stmts: &[Stmt], level: usize) {
    for s in stmts {
        stmt(out, s, level);
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::Assign { name, value } => {
            out.push_str(name);
            out.push_str(" = ");
            expr(out, value);
            out.push('\n');
        }
        StmtKind::Return(e) => {
            out.push_str("return ");
            expr(out, e);
            out.push('\n');
        }
        StmtKind::Expr(e) => {
            expr(out, e);
            out.push('\n');
        }
        StmtKind::If {
            cond,
            then_block,
            elifs,
            else_block,
        } => {
            out.push_str("if ");
            expr(out, cond);
            out.push_str(":\n");
            block(out, then_block, level + 1);
            for (c, b) in elifs {
                indent(out, level);
                out.push_str("elif ");
                expr(out, c);
                out.push_str(":\n");
                block(out, b, level + 1);
            }
            if let Some(b) = else_block {
                indent(out, level);
                out.push_str("else:\n");
                block(out, b, level + 1);
            }
        }
        StmtKind::For {
            targets,
            iterable,
            body,
        } => {
            out.push_str("for ");
            out.push_str(&targets.join(", "));
            out.push_str(" in ");
            expr(out, iterable);
            out.push_str(":\n");
            block(out, body, level + 1);
        }
    }
}

fn precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(op, ..) => binop_prec(*op),
        ExprKind::Unary(UnaryOp::Not, _) => PREC_NOT,
        ExprKind::Unary(UnaryOp::Neg, _) => PREC_NEG,
        ExprKind::MethodCall { .. } | ExprKind::Index(..) | ExprKind::Call { .. } => PREC_POSTFIX,
        ExprKind::Literal(Literal::Int(i)) if *i < 0 => PREC_NEG,
        ExprKind::Literal(Literal::Float(x)) if x.is_sign_negative() => PREC_NEG,
        ExprKind::Literal(_) | ExprKind::Name(_) | ExprKind::List(_) => PREC_ATOM,
    }
}

fn binop_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => PREC_OR,
        BinOp::And => PREC_AND,
        BinOp::Add | BinOp::Sub => PREC_ADD,
        BinOp::Mul | BinOp::Div => PREC_MUL,
        _ => PREC_CMP,
    }
}

fn child(out: &mut String, e: &Expr, min_prec: u8) {
    if precedence(e) < min_prec {
        out.push('(');
        expr(out, e);
        out.push(')');
    } else {
        expr(out, e);
    }
}

fn list(out: &mut String, items: &[Expr]) {
    for (i, a) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr(out, a);
    }
}

fn expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Literal(l) => literal(out, l),
        ExprKind::Name(n) => out.push_str(n),
        ExprKind::Binary(op, l, r) => {
            let p = binop_prec(*op);
            // Comparisons do not chain, so neither side may be a bare comparison.
            let left_min = if op.is_comparison() { p + 1 } else { p };
            child(out, l, left_min);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            child(out, r, p + 1);
        }
        ExprKind::Unary(UnaryOp::Not, inner) => {
            out.push_str("not ");
            child(out, inner, PREC_NOT);
        }
        ExprKind::Unary(UnaryOp::Neg, inner) => {
            out.push('-');
            child(out, inner, PREC_NEG);
        }
        ExprKind::MethodCall {
            receiver,
            method,
            args,
        } => {
            child(out, receiver, PREC_POSTFIX);
            out.push('.');
            out.push_str(method.name());
            out.push('(');
            list(out, args);
            out.push(')');
        }
        ExprKind::Call { builtin, args } => {
            out.push_str(builtin.name());
            out.push('(');
            list(out, args);
            out.push(')');
        }
        ExprKind::List(items) => {
            out.push('[');
            list(out, items);
            out.push(']');
        }
        ExprKind::Index(recv, idx) => {
            child(out, recv, PREC_POSTFIX);
            out.push('[');
            expr(out, idx);
            out.push(']');
        }
    }
}

fn literal(out: &mut String, l: &Literal) {
    match l {
        Literal::Int(i) => out.push_str(&i.to_string()),
        Literal::Float(x) => {
            // Display never uses exponent notation, which the lexer lacks.
            let s = x.to_string();
            out.push_str(&s);
            if !s.contains('.') {
                out.push_str(".0");
            }
        }
        Literal::Bool(true) => out.push_str("True"),
        Literal::Bool(false) => out.push_str("False"),
        Literal::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
    }
}
