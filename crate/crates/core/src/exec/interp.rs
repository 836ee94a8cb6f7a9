use std::collections::{BTreeSet, HashMap};

use super::{
    Answer, CallKind, CallRecord, ExecError, ExecErrorKind, ExecOptions, Outcome, SiteGradient,
    Task, Value,
};
use crate::grounding::{Arity, Grounder};
use crate::lang::{
    BinOp, Builtin, Expr, ExprKind, Literal, Method, Program, Span, Stmt, StmtKind, UnaryOp,
};
use crate::tensor::{
    softmax, ArithKind, Comparison, Connective, Quantifier, RelateMode, Shape, SoftValue, Tape,
    TensorError,
};

type Result<T> = std::result::Result<T, ExecError>;

enum Flow {
    Normal,
    Return(Value, Span),
}

fn type_error(span: Span, msg: impl Into<String>) -> ExecError {
    ExecError::new(ExecErrorKind::Type(msg.into()), span)
}

fn arg_error(span: Span, msg: impl Into<String>) -> ExecError {
    ExecError::new(ExecErrorKind::Argument(msg.into()), span)
}

fn tensor(span: Span) -> impl Fn(TensorError) -> ExecError {
    move |e| ExecError::new(e, span)
}

/// Interpreter state for one program run: environment, tape and trace.
pub struct Executor<'g> {
    grounder: &'g dyn Grounder,
    opts: ExecOptions,
    tape: Tape,
    env: HashMap<String, Value>,
    trace: Vec<CallRecord>,
    steps: usize,
    soft_branch: bool,
}

impl<'g> Executor<'g> {
    pub fn new(grounder: &'g dyn Grounder, opts: ExecOptions) -> Result<Self> {
        opts.smoothing.validate().map_err(ExecError::bare)?;
        let mode = if opts.relate_literal {
            RelateMode::Literal
        } else {
            RelateMode::Weighted
        };
        Ok(Executor {
            grounder,
            opts,
            tape: Tape::with_relate_mode(mode),
            env: HashMap::new(),
            trace: Vec::new(),
            steps: 0,
            soft_branch: false,
        })
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Value) {
        self.env.insert(name.into(), value);
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn trace(&self) -> &[CallRecord] {
        &self.trace
    }

    pub fn run(mut self, program: &Program) -> Result<Outcome> {
        let n = self.grounder.object_count();
        let returned = match self.exec_block(&program.statements) {
            Ok(Flow::Return(v, span)) => (v, span),
            Ok(Flow::Normal) => return Err(ExecError::bare(ExecErrorKind::MissingReturn)),
            Err(ExecError {
                kind: ExecErrorKind::Tensor(TensorError::EmptyVector),
                ..
            }) if n == 0 => return Ok(self.no_objects()),
            Err(e) => return Err(e),
        };
        self.finalize(returned.0, returned.1)
    }

    fn no_objects(self) -> Outcome {
        Outcome {
            answer: Answer::NoObjects,
            trace: self.trace,
            gradients: None,
            soft_branch: self.soft_branch,
            steps: self.steps,
        }
    }

    fn step(&mut self, span: Span) -> Result<()> {
        self.steps += 1;
        if self.steps > self.opts.step_budget {
            return Err(ExecError::new(
                ExecErrorKind::StepBudget(self.opts.step_budget),
                span,
            ));
        }
        Ok(())
    }

    fn exec_block(&mut self, stmts: &[Stmt]) -> Result<Flow> {
        for stmt in stmts {
            if let Flow::Return(v, s) = self.exec_stmt(stmt)? {
                return Ok(Flow::Return(v, s));
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_stmt(&mut self, stmt: &Stmt) -> Result<Flow> {
        self.step(stmt.span)?;
        match &stmt.kind {
            StmtKind::Assign { name, value } => {
                let v = self.eval_expr(value)?;
                self.env.insert(name.clone(), v);
                Ok(Flow::Normal)
            }
            StmtKind::Expr(e) => {
                self.eval_expr(e)?;
                Ok(Flow::Normal)
            }
            StmtKind::Return(e) => Ok(Flow::Return(self.eval_expr(e)?, e.span)),
            StmtKind::If {
                cond,
                then_block,
                elifs,
                else_block,
            } => {
                let c = self.eval_expr(cond)?;
                if self.truthy(&c, cond.span)? {
                    return self.exec_block(then_block);
                }
                for (cond, block) in elifs {
                    let c = self.eval_expr(cond)?;
                    if self.truthy(&c, cond.span)? {
                        return self.exec_block(block);
                    }
                }
                match else_block {
                    Some(block) => self.exec_block(block),
                    None => Ok(Flow::Normal),
                }
            }
            StmtKind::For {
                targets,
                iterable,
                body,
            } => {
                let it = self.eval_expr(iterable)?;
                for item in self.iterate(it, iterable.span)? {
                    self.step(stmt.span)?;
                    self.bind_targets(targets, item, stmt.span)?;
                    if let Flow::Return(v, s) = self.exec_block(body)? {
                        return Ok(Flow::Return(v, s));
                    }
                }
                Ok(Flow::Normal)
            }
        }
    }

    fn bind_targets(&mut self, targets: &[String], item: Value, span: Span) -> Result<()> {
        match targets {
            [name] => {
                self.env.insert(name.clone(), item);
            }
            [a, b] => {
                let (first, second) = match item {
                    Value::ObjectScore { id, score } => {
                        (Value::Integer(id as i64), Value::Soft(score))
                    }
                    Value::List(items) if items.len() == 2 => {
                        let mut it = items.into_iter();
                        (it.next().unwrap(), it.next().unwrap())
                    }
                    other => {
                        return Err(type_error(
                            span,
                            format!("cannot unpack a {} into two names", other.type_name()),
                        ))
                    }
                };
                self.env.insert(a.clone(), first);
                self.env.insert(b.clone(), second);
            }
            _ => return Err(type_error(span, "a for loop binds one or two names")),
        }
        Ok(())
    }

    /// Crisp truth value of a condition. Probabilities are true at >= 0.5,
    /// counts and numbers at > 0.5.
    pub fn truthy(&mut self, v: &Value, span: Span) -> Result<bool> {
        Ok(match v {
            Value::Boolean(b) => *b,
            Value::Soft(s) => match s.item() {
                Some(x) => {
                    self.soft_branch = true;
                    x >= 0.5
                }
                None => {
                    return Err(type_error(
                        span,
                        format!("cannot branch on a {}; quantify it first", v.type_name()),
                    ))
                }
            },
            Value::ObjectScore { score, .. } => {
                self.soft_branch = true;
                score.data()[0] >= 0.5
            }
            Value::SoftCount(s) => {
                self.soft_branch = true;
                s.data()[0] > 0.5
            }
            Value::Integer(i) => *i as f64 > 0.5,
            Value::Real(r) => *r > 0.5,
            Value::Text(t) => !t.is_empty(),
            Value::List(items) => !items.is_empty(),
        })
    }

    /// Lists yield their elements; a per-object vector yields
    /// `(id, score)` pairs in id order.
    pub fn iterate(&mut self, v: Value, span: Span) -> Result<Vec<Value>> {
        match v {
            Value::List(items) => Ok(items),
            Value::Soft(s) if matches!(s.shape(), Shape::Vector(_)) => {
                let n = s.shape().len();
                (0..n)
                    .map(|id| {
                        let score = self.tape.index(&s, id).map_err(tensor(span))?;
                        Ok(Value::ObjectScore { id, score })
                    })
                    .collect()
            }
            other => Err(type_error(
                span,
                format!("cannot iterate over a {}", other.type_name()),
            )),
        }
    }

    pub fn eval_expr(&mut self, e: &Expr) -> Result<Value> {
        self.step(e.span)?;
        let span = e.span;
        match &e.kind {
            ExprKind::Literal(lit) => Ok(match lit {
                Literal::Int(i) => Value::Integer(*i),
                Literal::Float(f) => Value::Real(*f),
                Literal::Str(s) => Value::Text(s.clone()),
                Literal::Bool(b) => Value::Boolean(*b),
            }),
            ExprKind::Name(name) => self
                .env
                .get(name)
                .cloned()
                .ok_or_else(|| ExecError::new(ExecErrorKind::UnboundName(name.clone()), span)),
            ExprKind::List(items) => Ok(Value::List(
                items
                    .iter()
                    .map(|i| self.eval_expr(i))
                    .collect::<Result<_>>()?,
            )),
            ExprKind::Unary(op, inner) => {
                let v = self.eval_expr(inner)?;
                self.unary(*op, v, span)
            }
            ExprKind::Binary(op, l, r) => {
                let lv = self.eval_expr(l)?;
                let rv = self.eval_expr(r)?;
                self.binary(*op, lv, rv, span)
            }
            ExprKind::Index(recv, idx) => {
                let rv = self.eval_expr(recv)?;
                let iv = self.eval_expr(idx)?;
                self.index(rv, iv, span)
            }
            ExprKind::MethodCall {
                receiver,
                method,
                args,
            } => {
                let rv = self.eval_expr(receiver)?;
                self.method(rv, *method, args, span)
            }
            ExprKind::Call { builtin, args } => self.call(*builtin, args, span),
        }
    }

    fn soft_constant(&self, x: f64, span: Span) -> Result<SoftValue> {
        SoftValue::scalar(x).map_err(tensor(span))
    }

    /// A number as a soft count; negative numbers become `0 - |x|`.
    fn count_constant(&mut self, x: f64, span: Span) -> Result<SoftValue> {
        if x >= 0.0 {
            SoftValue::soft_count(x).map_err(tensor(span))
        } else {
            let zero = SoftValue::soft_count(0.0).map_err(tensor(span))?;
            let mag = SoftValue::soft_count(-x).map_err(tensor(span))?;
            self.tape
                .arith(ArithKind::Sub, &zero, &mag)
                .map_err(tensor(span))
        }
    }

    /// Operand of a connective: probabilities, booleans and numbers in
    /// [0, 1]. Soft counts pass through so the tensor layer can reject them.
    fn logic_operand(&self, v: Value, span: Span) -> Result<SoftValue> {
        match v.decay() {
            Value::Soft(s) | Value::SoftCount(s) => Ok(s),
            Value::Boolean(b) => self.soft_constant(if b { 1.0 } else { 0.0 }, span),
            Value::Integer(i) if (0..=1).contains(&i) => self.soft_constant(i as f64, span),
            Value::Real(r) if (0.0..=1.0).contains(&r) => self.soft_constant(r, span),
            other => Err(type_error(
                span,
                format!(
                    "logical operators are undefined for a {}",
                    other.type_name()
                ),
            )),
        }
    }

    /// Operand of a soft comparison or soft arithmetic.
    fn scalar_operand(&mut self, v: Value, span: Span, what: &str) -> Result<SoftValue> {
        match v.decay() {
            Value::Soft(s) | Value::SoftCount(s) => Ok(s),
            Value::Integer(i) => self.count_constant(i as f64, span),
            Value::Real(r) => self.count_constant(r, span),
            other => Err(type_error(
                span,
                format!("{what} is undefined for a {}", other.type_name()),
            )),
        }
    }

    fn connective(&mut self, kind: Connective, l: Value, r: Value, span: Span) -> Result<Value> {
        let (l, r) = (l.decay(), r.decay());
        if let (Value::Boolean(a), Value::Boolean(b)) = (&l, &r) {
            return Ok(Value::Boolean(match kind {
                Connective::And => *a && *b,
                Connective::Or => *a || *b,
                Connective::Implies => !*a || *b,
                Connective::Not => unreachable!(),
            }));
        }
        let soft = |v: &Value| matches!(v, Value::Soft(_) | Value::SoftCount(_));
        if !soft(&l) && !soft(&r) {
            return Err(type_error(
                span,
                format!(
                    "logical operators are undefined for {} and {}",
                    l.type_name(),
                    r.type_name()
                ),
            ));
        }
        let a = self.logic_operand(l, span)?;
        let b = self.logic_operand(r, span)?;
        let out = self
            .tape
            .connective(kind, &a, Some(&b))
            .map_err(tensor(span))?;
        Ok(Value::Soft(out))
    }

    fn soft_not(&mut self, v: &SoftValue, span: Span) -> Result<SoftValue> {
        self.tape
            .connective(Connective::Not, v, None)
            .map_err(tensor(span))
    }

    fn compare(&mut self, op: BinOp, l: Value, r: Value, span: Span) -> Result<Value> {
        let (l, r) = (l.decay(), r.decay());
        let is_soft = |v: &Value| matches!(v, Value::Soft(_) | Value::SoftCount(_));
        if is_soft(&l) || is_soft(&r) {
            let a = self.scalar_operand(l, span, "comparison")?;
            let b = self.scalar_operand(r, span, "comparison")?;
            let p = self.opts.smoothing;
            let mut cmp = |kind, x: &SoftValue, y: &SoftValue| {
                self.tape.soft_compare(kind, x, y, p).map_err(tensor(span))
            };
            let out = match op {
                BinOp::Eq => cmp(Comparison::Eq, &a, &b)?,
                BinOp::Gt => cmp(Comparison::Gt, &a, &b)?,
                BinOp::Lt => cmp(Comparison::Gt, &b, &a)?,
                BinOp::Ne => {
                    let eq = cmp(Comparison::Eq, &a, &b)?;
                    self.soft_not(&eq, span)?
                }
                BinOp::Ge => {
                    let lt = cmp(Comparison::Gt, &b, &a)?;
                    self.soft_not(&lt, span)?
                }
                BinOp::Le => {
                    let gt = cmp(Comparison::Gt, &a, &b)?;
                    self.soft_not(&gt, span)?
                }
                _ => unreachable!("not a comparison"),
            };
            return Ok(Value::Soft(out));
        }
        let ord = match (&l, &r) {
            (Value::Integer(a), Value::Integer(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) if matches!(op, BinOp::Eq | BinOp::Ne) => {
                Some(a.cmp(b))
            }
            (Value::Boolean(a), Value::Boolean(b)) if matches!(op, BinOp::Eq | BinOp::Ne) => {
                Some(a.cmp(b))
            }
            _ => match (l.as_number(), r.as_number()) {
                (Some(a), Some(b)) => a.partial_cmp(&b),
                _ => {
                    return Err(type_error(
                        span,
                        format!(
                            "{} is undefined for {} and {}",
                            op.symbol(),
                            l.type_name(),
                            r.type_name()
                        ),
                    ))
                }
            },
        };
        let Some(ord) = ord else {
            return Ok(Value::Boolean(op == BinOp::Ne));
        };
        use std::cmp::Ordering::*;
        Ok(Value::Boolean(match op {
            BinOp::Eq => ord == Equal,
            BinOp::Ne => ord != Equal,
            BinOp::Lt => ord == Less,
            BinOp::Gt => ord == Greater,
            BinOp::Le => ord != Greater,
            BinOp::Ge => ord != Less,
            _ => unreachable!("not a comparison"),
        }))
    }

    fn arithmetic(&mut self, op: BinOp, l: Value, r: Value, span: Span) -> Result<Value> {
        let kind = match op {
            BinOp::Add => ArithKind::Add,
            BinOp::Sub => ArithKind::Sub,
            BinOp::Mul => ArithKind::Mul,
            BinOp::Div => ArithKind::Div,
            _ => unreachable!("not arithmetic"),
        };
        let (l, r) = (l.decay(), r.decay());
        match (l, r) {
            (Value::List(mut a), Value::List(b)) if kind == ArithKind::Add => {
                a.extend(b);
                Ok(Value::List(a))
            }
            (Value::Text(a), Value::Text(b)) if kind == ArithKind::Add => Ok(Value::Text(a + &b)),
            (Value::Integer(a), Value::Integer(b)) if kind != ArithKind::Div => {
                let out = match kind {
                    ArithKind::Add => a.checked_add(b),
                    ArithKind::Sub => a.checked_sub(b),
                    _ => a.checked_mul(b),
                };
                out.map(Value::Integer)
                    .ok_or_else(|| type_error(span, "integer overflow"))
            }
            (l @ (Value::SoftCount(_) | Value::Soft(_)), r)
            | (l, r @ (Value::SoftCount(_) | Value::Soft(_))) => {
                let a = self.scalar_operand(l, span, "arithmetic")?;
                let b = self.scalar_operand(r, span, "arithmetic")?;
                let out = self.tape.arith(kind, &a, &b).map_err(tensor(span))?;
                Ok(Value::SoftCount(out))
            }
            (l, r) => match (l.as_number(), r.as_number()) {
                (Some(a), Some(b)) => {
                    let out = match kind {
                        ArithKind::Add => a + b,
                        ArithKind::Sub => a - b,
                        ArithKind::Mul => a * b,
                        ArithKind::Div if b == 0.0 => {
                            return Err(ExecError::new(TensorError::DivisionByZero, span))
                        }
                        ArithKind::Div => a / b,
                    };
                    Ok(Value::Real(out))
                }
                _ => Err(type_error(
                    span,
                    format!(
                        "{} is undefined for {} and {}",
                        op.symbol(),
                        l.type_name(),
                        r.type_name()
                    ),
                )),
            },
        }
    }

    fn binary(&mut self, op: BinOp, l: Value, r: Value, span: Span) -> Result<Value> {
        match op {
            BinOp::And => self.connective(Connective::And, l, r, span),
            BinOp::Or => self.connective(Connective::Or, l, r, span),
            op if op.is_comparison() => self.compare(op, l, r, span),
            op => self.arithmetic(op, l, r, span),
        }
    }

    fn unary(&mut self, op: UnaryOp, v: Value, span: Span) -> Result<Value> {
        match (op, v.decay()) {
            (UnaryOp::Not, Value::Boolean(b)) => Ok(Value::Boolean(!b)),
            (UnaryOp::Not, Value::Soft(s) | Value::SoftCount(s)) => {
                Ok(Value::Soft(self.soft_not(&s, span)?))
            }
            (UnaryOp::Neg, Value::Integer(i)) => i
                .checked_neg()
                .map(Value::Integer)
                .ok_or_else(|| type_error(span, "integer overflow")),
            (UnaryOp::Neg, Value::Real(r)) => Ok(Value::Real(-r)),
            (UnaryOp::Neg, Value::SoftCount(s)) => {
                let zero = SoftValue::soft_count(0.0).map_err(tensor(span))?;
                let out = self
                    .tape
                    .arith(ArithKind::Sub, &zero, &s)
                    .map_err(tensor(span))?;
                Ok(Value::SoftCount(out))
            }
            (op, other) => Err(type_error(
                span,
                format!(
                    "unary {} is undefined for a {}",
                    match op {
                        UnaryOp::Not => "not",
                        UnaryOp::Neg => "-",
                    },
                    other.type_name()
                ),
            )),
        }
    }

    fn object_index(&self, v: &Value, len: usize, span: Span) -> Result<usize> {
        let i = v
            .as_object_id()
            .ok_or_else(|| type_error(span, format!("cannot index with a {}", v.type_name())))?;
        usize::try_from(i).ok().filter(|&i| i < len).ok_or_else(|| {
            ExecError::new(
                TensorError::IndexOutOfBounds {
                    index: i.max(0) as usize,
                    len,
                },
                span,
            )
        })
    }

    fn index(&mut self, recv: Value, idx: Value, span: Span) -> Result<Value> {
        match recv {
            Value::List(items) => {
                let Value::Integer(i) = idx else {
                    return Err(type_error(
                        span,
                        format!("list index must be an integer, got a {}", idx.type_name()),
                    ));
                };
                let len = items.len() as i64;
                let j = if i < 0 { i + len } else { i };
                if !(0..len).contains(&j) {
                    return Err(ExecError::new(
                        TensorError::IndexOutOfBounds {
                            index: i.unsigned_abs() as usize,
                            len: items.len(),
                        },
                        span,
                    ));
                }
                Ok(items.into_iter().nth(j as usize).unwrap())
            }
            Value::ObjectScore { id, score } => match idx {
                Value::Integer(0) => Ok(Value::Integer(id as i64)),
                Value::Integer(1) => Ok(Value::Soft(score)),
                other => Err(type_error(
                    span,
                    format!("an (id, score) pair has no element {other}"),
                )),
            },
            Value::Soft(s) | Value::SoftCount(s) => match s.shape() {
                Shape::Vector(n) => {
                    let i = self.object_index(&idx, n, span)?;
                    Ok(Value::Soft(self.tape.index(&s, i).map_err(tensor(span))?))
                }
                Shape::Matrix(n) => {
                    let i = self.object_index(&idx, n, span)?;
                    Ok(Value::Soft(self.tape.row(&s, i).map_err(tensor(span))?))
                }
                Shape::Scalar => Err(type_error(span, "cannot index a scalar")),
            },
            other => Err(type_error(
                span,
                format!("cannot index a {}", other.type_name()),
            )),
        }
    }

    fn method(&mut self, recv: Value, method: Method, args: &[Expr], span: Span) -> Result<Value> {
        let expect_args = |range: std::ops::RangeInclusive<usize>| {
            if range.contains(&args.len()) {
                Ok(())
            } else {
                Err(arg_error(
                    span,
                    format!(
                        ".{}() takes {} argument(s), got {}",
                        method.name(),
                        fmt_range(&range),
                        args.len()
                    ),
                ))
            }
        };
        let quantifier = match method {
            Method::Exists => Quantifier::Exists,
            Method::Forall => Quantifier::Forall,
            Method::Count => Quantifier::Count,
            // The bound-variable argument only names the selected object.
            Method::Iota => Quantifier::Iota,
            Method::Implies => {
                expect_args(1..=1)?;
                let other = self.eval_expr(&args[0])?;
                return self.connective(Connective::Implies, recv, other, span);
            }
        };
        expect_args(if method == Method::Iota { 0..=1 } else { 0..=0 })?;
        let v = match recv.decay() {
            Value::Soft(s) | Value::SoftCount(s) => s,
            other => {
                return Err(type_error(
                    span,
                    format!(
                        ".{}() is undefined for a {}",
                        method.name(),
                        other.type_name()
                    ),
                ))
            }
        };
        let out = self.tape.quantify(quantifier, &v).map_err(tensor(span))?;
        Ok(if out.is_soft_count() {
            Value::SoftCount(out)
        } else {
            Value::Soft(out)
        })
    }

    fn charge_call(&mut self, span: Span) -> Result<()> {
        if self.trace.len() >= self.opts.call_budget {
            return Err(ExecError::new(
                ExecErrorKind::CallBudget(self.opts.call_budget),
                span,
            ));
        }
        Ok(())
    }

    fn text_arg(&mut self, e: &Expr, what: &str) -> Result<String> {
        match self.eval_expr(e)? {
            Value::Text(t) => Ok(t),
            other => Err(arg_error(
                e.span,
                format!("{what} must be text, got a {}", other.type_name()),
            )),
        }
    }

    fn call(&mut self, builtin: Builtin, args: &[Expr], span: Span) -> Result<Value> {
        let n_args = |lo: usize, hi: usize, name: &str| {
            if (lo..=hi).contains(&args.len()) {
                Ok(())
            } else {
                Err(arg_error(
                    span,
                    format!(
                        "{name}() takes {} argument(s), got {}",
                        fmt_range(&(lo..=hi)),
                        args.len()
                    ),
                ))
            }
        };
        match builtin {
            Builtin::Score => {
                n_args(1, 2, "score")?;
                let question = self.text_arg(&args[0], "the score question")?;
                let arity = match args.get(1) {
                    None => Arity::Object,
                    Some(e) => match self.eval_expr(e)? {
                        Value::Integer(k) => Arity::from_i64(k).ok_or_else(|| {
                            arg_error(e.span, format!("num_objects must be 0, 1 or 2, got {k}"))
                        })?,
                        other => {
                            return Err(arg_error(
                                e.span,
                                format!(
                                    "num_objects must be an integer, got a {}",
                                    other.type_name()
                                ),
                            ))
                        }
                    },
                };
                self.score(question, arity, span)
            }
            Builtin::Query => {
                if args.is_empty() {
                    return Err(arg_error(span, "query() needs a question"));
                }
                let question = self.text_arg(&args[0], "the query question")?;
                let n = self.grounder.object_count();
                let mut objects = Vec::new();
                for e in &args[1..] {
                    let v = self.eval_expr(e)?;
                    let items = match v {
                        Value::List(items) => items,
                        other => vec![other],
                    };
                    for item in items {
                        objects.push(self.object_index(&item, n, e.span)?);
                    }
                }
                self.charge_call(span)?;
                let text = self
                    .grounder
                    .query(&question, &objects)
                    .map_err(|e| ExecError::new(e, span))?;
                self.trace.push(CallRecord {
                    kind: CallKind::Query,
                    question,
                    arity: None,
                    objects,
                    shape: None,
                    text: Some(text.clone()),
                    span,
                    node: None,
                });
                Ok(Value::Text(text))
            }
            Builtin::Len => {
                n_args(1, 1, "len")?;
                let v = self.eval_expr(&args[0])?;
                let len = match &v {
                    // Strings are counted once each.
                    Value::List(items)
                        if !items.is_empty()
                            && items.iter().all(|i| matches!(i, Value::Text(_))) =>
                    {
                        items
                            .iter()
                            .filter_map(|i| match i {
                                Value::Text(t) => Some(t.as_str()),
                                _ => None,
                            })
                            .collect::<BTreeSet<_>>()
                            .len()
                    }
                    Value::List(items) => items.len(),
                    Value::Text(t) => t.chars().count(),
                    Value::Soft(s) if s.shape() != Shape::Scalar => match s.shape() {
                        Shape::Vector(n) | Shape::Matrix(n) => n,
                        Shape::Scalar => unreachable!(),
                    },
                    other => {
                        return Err(type_error(
                            span,
                            format!("len() is undefined for a {}", other.type_name()),
                        ))
                    }
                };
                Ok(Value::Integer(len as i64))
            }
            Builtin::Str => {
                n_args(1, 1, "str")?;
                let v = self.eval_expr(&args[0])?;
                Ok(Value::Text(v.to_string()))
            }
            Builtin::Int => {
                n_args(1, 1, "int")?;
                let v = self.eval_expr(&args[0])?;
                let out = match v.decay() {
                    Value::Integer(i) => Some(i),
                    Value::Boolean(b) => Some(b as i64),
                    Value::Real(r) if r.is_finite() => Some(r.trunc() as i64),
                    Value::SoftCount(s) => Some(round_half_up(s.data()[0])),
                    Value::Soft(s) if s.shape() == Shape::Scalar => {
                        Some(round_half_up(s.data()[0]))
                    }
                    Value::Text(t) => Some(
                        t.trim()
                            .parse::<i64>()
                            .map_err(|_| arg_error(span, format!("int() cannot parse {t:?}")))?,
                    ),
                    _ => None,
                };
                out.map(Value::Integer).ok_or_else(|| {
                    type_error(span, "int() expects a number, a soft scalar or text")
                })
            }
            Builtin::Abs => {
                n_args(1, 1, "abs")?;
                match self.eval_expr(&args[0])?.decay() {
                    Value::Integer(i) => Ok(Value::Integer(i.abs())),
                    Value::Real(r) => Ok(Value::Real(r.abs())),
                    Value::SoftCount(s) => {
                        Ok(Value::SoftCount(self.tape.abs(&s).map_err(tensor(span))?))
                    }
                    Value::Soft(s) if s.shape() == Shape::Scalar => Ok(Value::Soft(s)),
                    other => Err(type_error(
                        span,
                        format!("abs() is undefined for a {}", other.type_name()),
                    )),
                }
            }
        }
    }

    fn score(&mut self, question: String, arity: Arity, span: Span) -> Result<Value> {
        self.charge_call(span)?;
        let n = self.grounder.object_count();
        let scores = self
            .grounder
            .score(&question, arity)
            .map_err(|e| ExecError::new(e, span))?;
        let value = match arity {
            Arity::Image => SoftValue::scalar(scores[0]),
            Arity::Object => SoftValue::vector(scores),
            Arity::Pair => SoftValue::matrix(n, scores),
        }
        .map_err(tensor(span))?;
        let leaf = self.tape.leaf(value);
        self.trace.push(CallRecord {
            kind: CallKind::Score,
            question,
            arity: Some(arity),
            objects: Vec::new(),
            shape: Some(leaf.shape()),
            text: None,
            span,
            node: leaf.node(),
        });
        Ok(Value::Soft(leaf))
    }

    fn finalize(mut self, value: Value, span: Span) -> Result<Outcome> {
        let invalid = |v: &Value| ExecError::new(ExecErrorKind::InvalidAnswer(v.type_name()), span);
        let (answer, grad_root) = match self.opts.task {
            Task::Reg => match &value {
                Value::Soft(s) if matches!(s.shape(), Shape::Vector(_)) => {
                    if s.shape().is_empty() {
                        return Ok(self.no_objects());
                    }
                    let data = s.data();
                    let id = first_argmax(data);
                    let root = self.tape.index(s, id).map_err(tensor(span))?;
                    (
                        Answer::ObjectRef {
                            id,
                            distribution: softmax(data),
                        },
                        Some(root),
                    )
                }
                other => return Err(invalid(other)),
            },
            Task::Vqa => match value.clone().decay() {
                Value::Soft(s) if s.shape() == Shape::Scalar => {
                    let x = s.data()[0];
                    (
                        Answer::YesNo {
                            value: x >= 0.5,
                            score: x,
                        },
                        Some(s),
                    )
                }
                Value::SoftCount(s) => {
                    let x = s.data()[0];
                    (
                        Answer::Count {
                            value: round_half_up(x),
                            raw: x,
                        },
                        Some(s),
                    )
                }
                Value::Boolean(b) => (
                    Answer::YesNo {
                        value: b,
                        score: if b { 1.0 } else { 0.0 },
                    },
                    None,
                ),
                Value::Text(t) => (Answer::Text { value: t }, None),
                Value::Integer(i) => (Answer::Integer { value: i }, None),
                Value::Real(r) => (Answer::Real { value: r }, None),
                _ => return Err(invalid(&value)),
            },
        };
        let gradients = match grad_root {
            Some(root) if self.opts.gradients => Some(self.site_gradients(&root, span)?),
            _ => None,
        };
        Ok(Outcome {
            answer,
            trace: self.trace,
            gradients,
            soft_branch: self.soft_branch,
            steps: self.steps,
        })
    }

    fn site_gradients(&self, root: &SoftValue, span: Span) -> Result<Vec<SiteGradient>> {
        let grads = match root.node() {
            Some(_) => Some(self.tape.backward(root).map_err(tensor(span))?),
            None => None,
        };
        Ok(self
            .trace
            .iter()
            .enumerate()
            .filter_map(|(call, rec)| {
                let node = rec.node?;
                let len = rec.shape.map_or(0, |s| s.len());
                let adjoints = grads
                    .as_ref()
                    .and_then(|g| g.get(node))
                    .map_or_else(|| vec![0.0; len], <[f64]>::to_vec);
                Some(SiteGradient {
                    call,
                    question: rec.question.clone(),
                    span: rec.span,
                    adjoints,
                })
            })
            .collect())
    }
}

fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Nearest integer, halves rounded toward +infinity.
pub(crate) fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

fn fmt_range(r: &std::ops::RangeInclusive<usize>) -> String {
    if r.start() == r.end() {
        r.start().to_string()
    } else {
        format!("{} to {}", r.start(), r.end())
    }
}
