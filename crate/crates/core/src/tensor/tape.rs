//! Append-only operation tape with reverse-mode accumulation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::ops::{argmax, argmin, extreme_gap, sigmoid, sign, softmax};
use super::{
    Comparison, Connective, Flavor, Quantifier, Result, Shape, SmoothingParams, SoftValue,
    TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// How a vector is joined with a relation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelateMode {
    /// `r_x = min(1, sum_y alpha_y * beta_xy)`: objects related to any
    /// alpha-weighted anchor.
    #[default]
    Weighted,
    /// `r_x = min(1, alpha_x * sum_y beta_xy)`, the subscripts read literally.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Constant,
    And,
    Or,
    Implies,
    Not,
    Relate(RelateMode),
    Exists,
    Forall,
    Count,
    Iota,
    Compare(Comparison, SmoothingParams),
    Arith(ArithKind),
    Abs,
    Index(usize),
    Row(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Shape,
    value: Arc<[f64]>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    relate_mode: RelateMode,
}

/// Adjoints of every leaf with respect to one scalar output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    leaves: BTreeMap<NodeId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.leaves.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.leaves.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_relate_mode(relate_mode: RelateMode) -> Self {
        Tape {
            nodes: Vec::new(),
            relate_mode,
        }
    }

    pub fn relate_mode(&self) -> RelateMode {
        self.relate_mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `value` as a differentiable input.
    pub fn leaf(&mut self, value: SoftValue) -> SoftValue {
        let id = self.push(Op::Leaf, Vec::new(), value.shape, value.data.clone());
        SoftValue {
            node: Some(id),
            ..value
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Shape, value: Arc<[f64]>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value,
        });
        id
    }

    /// Node id of an operand, recording untracked values as constants.
    fn bind(&mut self, v: &SoftValue) -> Result<NodeId> {
        match v.node {
            Some(id) => {
                let node = self.nodes.get(id.0).ok_or(TensorError::ForeignNode(id.0))?;
                if node.shape != v.shape || node.value.len() != v.data.len() {
                    return Err(TensorError::ForeignNode(id.0));
                }
                Ok(id)
            }
            None => Ok(self.push(Op::Constant, Vec::new(), v.shape, v.data.clone())),
        }
    }

    fn emit(
        &mut self,
        op: Op,
        inputs: &[&SoftValue],
        shape: Shape,
        flavor: Flavor,
        data: Vec<f64>,
    ) -> Result<SoftValue> {
        let ids = inputs
            .iter()
            .map(|v| self.bind(v))
            .collect::<Result<Vec<_>>>()?;
        let id = self.push(op, ids, shape, data.clone().into());
        Ok(SoftValue::from_parts(shape, flavor, data, id))
    }

    pub fn connective(
        &mut self,
        kind: Connective,
        lhs: &SoftValue,
        rhs: Option<&SoftValue>,
    ) -> Result<SoftValue> {
        let name = connective_name(kind);
        if lhs.is_soft_count() || rhs.is_some_and(SoftValue::is_soft_count) {
            return Err(TensorError::SoftCountOperand { op: name });
        }
        if kind == Connective::Not {
            if rhs.is_some() {
                return Err(TensorError::UnaryArity(name));
            }
            let data = lhs.data.iter().map(|a| 1.0 - a).collect();
            return self.emit(Op::Not, &[lhs], lhs.shape, Flavor::Probability, data);
        }
        let rhs = rhs.ok_or(TensorError::BinaryArity(name))?;
        match (lhs.shape, rhs.shape) {
            (a, b) if a == b => {
                let (op, f): (Op, fn(f64, f64) -> f64) = match kind {
                    Connective::And => (Op::And, f64::min),
                    Connective::Or => (Op::Or, f64::max),
                    Connective::Implies => (Op::Implies, |a, b| f64::max(1.0 - a, b)),
                    Connective::Not => unreachable!(),
                };
                let data = lhs
                    .data
                    .iter()
                    .zip(rhs.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect();
                self.emit(op, &[lhs, rhs], a, Flavor::Probability, data)
            }
            (Shape::Vector(n), Shape::Matrix(m)) if n == m && kind == Connective::And => {
                self.relate(lhs, rhs)
            }
            (a, b) => Err(TensorError::ShapeMismatch {
                op: name,
                lhs: a,
                rhs: b,
            }),
        }
    }

    /// Joins per-object scores with a relation matrix, see [`RelateMode`].
    pub fn relate(&mut self, alpha: &SoftValue, beta: &SoftValue) -> Result<SoftValue> {
        if alpha.is_soft_count() || beta.is_soft_count() {
            return Err(TensorError::SoftCountOperand { op: "relate" });
        }
        let n = match (alpha.shape, beta.shape) {
            (Shape::Vector(n), Shape::Matrix(m)) if n == m => n,
            (a, b) => {
                return Err(TensorError::ShapeMismatch {
                    op: "relate",
                    lhs: a,
                    rhs: b,
                })
            }
        };
        let mode = self.relate_mode;
        let data = relate_sums(mode, &alpha.data, &beta.data, n)
            .into_iter()
            .map(|s| s.min(1.0))
            .collect();
        self.emit(
            Op::Relate(mode),
            &[alpha, beta],
            Shape::Vector(n),
            Flavor::Probability,
            data,
        )
    }

    pub fn quantify(&mut self, kind: Quantifier, v: &SoftValue) -> Result<SoftValue> {
        let op_name = quantifier_name(kind);
        let n = match v.shape {
            Shape::Vector(n) => n,
            other => {
                return Err(TensorError::WrongShape {
                    op: op_name,
                    expected: "a vector",
                    got: other,
                })
            }
        };
        if v.is_soft_count() {
            return Err(TensorError::SoftCountOperand { op: op_name });
        }
        if n == 0 {
            return Err(TensorError::EmptyVector);
        }
        let xs = &v.data;
        match kind {
            Quantifier::Exists => {
                let m = xs[argmax(xs)];
                self.emit(
                    Op::Exists,
                    &[v],
                    Shape::Scalar,
                    Flavor::Probability,
                    vec![m],
                )
            }
            Quantifier::Forall => {
                let m = xs[argmin(xs)];
                self.emit(
                    Op::Forall,
                    &[v],
                    Shape::Scalar,
                    Flavor::Probability,
                    vec![m],
                )
            }
            Quantifier::Count => {
                let total = xs.iter().sum();
                self.emit(
                    Op::Count,
                    &[v],
                    Shape::Scalar,
                    Flavor::SoftCount,
                    vec![total],
                )
            }
            Quantifier::Iota => {
                let p = softmax(xs);
                self.emit(Op::Iota, &[v], v.shape, Flavor::Probability, p)
            }
        }
    }

    /// Smoothed equality / greater-than over scalars or soft counts.
    pub fn soft_compare(
        &mut self,
        kind: Comparison,
        s1: &SoftValue,
        s2: &SoftValue,
        params: SmoothingParams,
    ) -> Result<SoftValue> {
        for s in [s1, s2] {
            if s.shape != Shape::Scalar {
                return Err(TensorError::WrongShape {
                    op: comparison_name(kind),
                    expected: "scalar operands",
                    got: s.shape,
                });
            }
        }
        params.validate()?;
        let out = sigmoid(compare_logit(kind, s1.data[0], s2.data[0], params));
        self.emit(
            Op::Compare(kind, params),
            &[s1, s2],
            Shape::Scalar,
            Flavor::Probability,
            vec![out],
        )
    }

    /// Arithmetic over soft counts. The result is a soft count that may be
    /// negative (e.g. a difference of counts).
    pub fn arith(&mut self, kind: ArithKind, a: &SoftValue, b: &SoftValue) -> Result<SoftValue> {
        let name = arith_name(kind);
        for s in [a, b] {
            if s.shape != Shape::Scalar {
                return Err(TensorError::WrongShape {
                    op: name,
                    expected: "scalar operands",
                    got: s.shape,
                });
            }
            if !s.is_soft_count() {
                return Err(TensorError::ProbabilityOperand { op: name });
            }
        }
        let (x, y) = (a.data[0], b.data[0]);
        let out = match kind {
            ArithKind::Add => x + y,
            ArithKind::Sub => x - y,
            ArithKind::Mul => x * y,
            ArithKind::Div => {
                if y == 0.0 {
                    return Err(TensorError::DivisionByZero);
                }
                x / y
            }
        };
        if !out.is_finite() {
            return Err(TensorError::NonFinite(0));
        }
        self.emit(
            Op::Arith(kind),
            &[a, b],
            Shape::Scalar,
            Flavor::SoftCount,
            vec![out],
        )
    }

    pub fn abs(&mut self, a: &SoftValue) -> Result<SoftValue> {
        if a.shape != Shape::Scalar || !a.is_soft_count() {
            return Err(TensorError::ProbabilityOperand { op: "abs" });
        }
        let out = a.data[0].abs();
        self.emit(Op::Abs, &[a], Shape::Scalar, Flavor::SoftCount, vec![out])
    }

    /// Element `i` of a vector as a scalar.
    pub fn index(&mut self, v: &SoftValue, i: usize) -> Result<SoftValue> {
        let n = match v.shape {
            Shape::Vector(n) => n,
            other => {
                return Err(TensorError::WrongShape {
                    op: "index",
                    expected: "a vector",
                    got: other,
                })
            }
        };
        if i >= n {
            return Err(TensorError::IndexOutOfBounds { index: i, len: n });
        }
        let x = v.data[i];
        self.emit(Op::Index(i), &[v], Shape::Scalar, v.flavor, vec![x])
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: &SoftValue, i: usize) -> Result<SoftValue> {
        let n = match m.shape {
            Shape::Matrix(n) => n,
            other => {
                return Err(TensorError::WrongShape {
                    op: "row",
                    expected: "a matrix",
                    got: other,
                })
            }
        };
        if i >= n {
            return Err(TensorError::IndexOutOfBounds { index: i, len: n });
        }
        let data = m.data[i * n..(i + 1) * n].to_vec();
        self.emit(Op::Row(i), &[m], Shape::Vector(n), m.flavor, data)
    }

    /// Reverse accumulation from a scalar output. Every leaf on the tape gets
    /// an entry; leaves the output does not depend on get zeros.
    pub fn backward(&self, output: &SoftValue) -> Result<Gradients> {
        let out = output.node.ok_or(TensorError::ForeignNode(usize::MAX))?;
        if out.0 >= self.nodes.len() {
            return Err(TensorError::ForeignNode(out.0));
        }
        if self.nodes[out.0].shape != Shape::Scalar {
            return Err(TensorError::NonScalarOutput(self.nodes[out.0].shape));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(vec![1.0]);

        for id in (0..=out.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let contributions = self.local_gradients(node, &g);
            for (input, delta) in node.inputs.iter().zip(contributions) {
                let slot =
                    adj[input.0].get_or_insert_with(|| vec![0.0; self.nodes[input.0].value.len()]);
                for (s, d) in slot.iter_mut().zip(delta) {
                    *s += d;
                }
            }
            if matches!(node.op, Op::Leaf) {
                adj[id] = Some(g);
            }
        }

        let mut leaves = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = adj
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                leaves.insert(NodeId(i), g);
            }
        }
        Ok(Gradients { leaves })
    }

    /// Adjoint contributions of `node` to each of its inputs, given its own
    /// adjoint `g`.
    fn local_gradients(&self, node: &Node, g: &[f64]) -> Vec<Vec<f64>> {
        let input = |k: usize| -> &[f64] { &self.nodes[node.inputs[k].0].value };
        match node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::And | Op::Or | Op::Implies => {
                let (a, b) = (input(0), input(1));
                let mut da = vec![0.0; a.len()];
                let mut db = vec![0.0; b.len()];
                for i in 0..a.len() {
                    match node.op {
                        // Ties resolve to the lhs.
                        Op::And if a[i] <= b[i] => da[i] = g[i],
                        Op::Or if a[i] >= b[i] => da[i] = g[i],
                        Op::Implies if 1.0 - a[i] >= b[i] => da[i] = -g[i],
                        _ => db[i] = g[i],
                    }
                }
                vec![da, db]
            }
            Op::Not => vec![g.iter().map(|x| -x).collect()],
            Op::Relate(mode) => {
                let (alpha, beta) = (input(0), input(1));
                let n = alpha.len();
                let sums = relate_sums(mode, alpha, beta, n);
                let mut da = vec![0.0; n];
                let mut db = vec![0.0; n * n];
                for x in 0..n {
                    // min(1, s): at the tie the constant wins and the
                    // gradient is cut.
                    if sums[x] >= 1.0 {
                        continue;
                    }
                    let gx = g[x];
                    match mode {
                        RelateMode::Weighted => {
                            for y in 0..n {
                                da[y] += gx * beta[x * n + y];
                                db[x * n + y] += gx * alpha[y];
                            }
                        }
                        RelateMode::Literal => {
                            let row: f64 = beta[x * n..(x + 1) * n].iter().sum();
                            da[x] += gx * row;
                            for y in 0..n {
                                db[x * n + y] += gx * alpha[x];
                            }
                        }
                    }
                }
                vec![da, db]
            }
            Op::Exists | Op::Forall => {
                let v = input(0);
                let pick = if matches!(node.op, Op::Exists) {
                    argmax(v)
                } else {
                    argmin(v)
                };
                let mut dv = vec![0.0; v.len()];
                dv[pick] = g[0];
                vec![dv]
            }
            Op::Count => vec![vec![g[0]; input(0).len()]],
            Op::Iota => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                vec![y.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)).collect()]
            }
            Op::Compare(kind, p) => {
                let (s1, s2) = (input(0)[0], input(1)[0]);
                let out = node.value[0];
                let slope = out * (1.0 - out);
                let dz = match kind {
                    Comparison::Eq => -(p.tau / p.gamma) * sign(s1 - s2),
                    Comparison::Gt => p.tau,
                };
                let d = g[0] * slope * dz;
                vec![vec![d], vec![-d]]
            }
            Op::Arith(kind) => {
                let (x, y) = (input(0)[0], input(1)[0]);
                let (dx, dy) = match kind {
                    ArithKind::Add => (1.0, 1.0),
                    ArithKind::Sub => (1.0, -1.0),
                    ArithKind::Mul => (y, x),
                    ArithKind::Div => (1.0 / y, -x / (y * y)),
                };
                vec![vec![g[0] * dx], vec![g[0] * dy]]
            }
            Op::Abs => vec![vec![g[0] * sign(input(0)[0])]],
            Op::Index(i) => {
                let mut dv = vec![0.0; input(0).len()];
                dv[i] = g[0];
                vec![dv]
            }
            Op::Row(i) => {
                let len = input(0).len();
                let n = g.len();
                let mut dm = vec![0.0; len];
                dm[i * n..(i + 1) * n].copy_from_slice(g);
                vec![dm]
            }
        }
    }

    /// Distance from the recorded forward point to the nearest
    /// non-differentiable point of any min/max/abs/clamp on the tape.
    /// Infinite when the tape has no such kinks.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            let input = |k: usize| -> &[f64] { &self.nodes[node.inputs[k].0].value };
            let m = match node.op {
                Op::And | Op::Or => pairwise_gap(input(0), input(1), |a| a),
                Op::Implies => pairwise_gap(input(0), input(1), |a| 1.0 - a),
                Op::Relate(mode) => {
                    let n = input(0).len();
                    relate_sums(mode, input(0), input(1), n)
                        .iter()
                        .map(|s| (s - 1.0).abs())
                        .fold(f64::INFINITY, f64::min)
                }
                Op::Exists => {
                    let v = input(0);
                    extreme_gap(v, argmax(v))
                }
                Op::Forall => {
                    let v = input(0);
                    extreme_gap(v, argmin(v))
                }
                Op::Compare(Comparison::Eq, _) => (input(0)[0] - input(1)[0]).abs(),
                Op::Abs => input(0)[0].abs(),
                _ => f64::INFINITY,
            };
            margin = margin.min(m);
        }
        margin
    }
}

fn pairwise_gap(a: &[f64], b: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f(x) - y).abs())
        .fold(f64::INFINITY, f64::min)
}

fn relate_sums(mode: RelateMode, alpha: &[f64], beta: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|x| {
            let row = &beta[x * n..(x + 1) * n];
            match mode {
                RelateMode::Weighted => row.iter().zip(alpha).map(|(b, a)| a * b).sum(),
                RelateMode::Literal => alpha[x] * row.iter().sum::<f64>(),
            }
        })
        .collect()
}

fn compare_logit(kind: Comparison, s1: f64, s2: f64, p: SmoothingParams) -> f64 {
    match kind {
        Comparison::Eq => p.tau * (p.gamma - (s1 - s2).abs()) / p.gamma,
        Comparison::Gt => p.tau * (s1 - s2 - 1.0 + p.gamma),
    }
}

fn connective_name(kind: Connective) -> &'static str {
    match kind {
        Connective::And => "and",
        Connective::Or => "or",
        Connective::Implies => "implies",
        Connective::Not => "not",
    }
}

fn quantifier_name(kind: Quantifier) -> &'static str {
    match kind {
        Quantifier::Exists => "exists",
        Quantifier::Forall => "forall",
        Quantifier::Count => "count",
        Quantifier::Iota => "iota",
    }
}

fn comparison_name(kind: Comparison) -> &'static str {
    match kind {
        Comparison::Eq => "==",
        Comparison::Gt => ">",
    }
}

fn arith_name(kind: ArithKind) -> &'static str {
    match kind {
        ArithKind::Add => "+",
        ArithKind::Sub => "-",
        ArithKind::Mul => "*",
        ArithKind::Div => "/",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> SoftValue {
        SoftValue::scalar(x).unwrap()
    }

    fn v(xs: &[f64]) -> SoftValue {
        SoftValue::vector(xs.to_vec()).unwrap()
    }

    #[test]
    fn connectives_on_scalars() {
        let mut t = Tape::new();
        let and = t
            .connective(Connective::And, &s(0.7), Some(&s(0.4)))
            .unwrap();
        assert_eq!(and.item(), Some(0.4));
        let or = t
            .connective(Connective::Or, &s(0.7), Some(&s(0.4)))
            .unwrap();
        assert_eq!(or.item(), Some(0.7));
        let imp = t
            .connective(Connective::Implies, &s(0.9), Some(&s(0.2)))
            .unwrap();
        assert!((imp.item().unwrap() - 0.2).abs() < 1e-15);
        let not = t
            .connective(Connective::Not, &v(&[0.3, 1.0, 0.0]), None)
            .unwrap();
        assert_eq!(not.data(), &[0.7, 0.0, 1.0]);
    }

    #[test]
    fn connective_errors() {
        let mut t = Tape::new();
        assert!(matches!(
            t.connective(Connective::Not, &s(0.1), Some(&s(0.2))),
            Err(TensorError::UnaryArity(_))
        ));
        assert!(matches!(
            t.connective(Connective::And, &v(&[0.1, 0.2]), Some(&s(0.2))),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let m = SoftValue::matrix(2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            t.connective(Connective::Or, &v(&[0.1, 0.2]), Some(&m)),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let m3 = SoftValue::matrix(3, vec![0.0; 9]).unwrap();
        assert!(t
            .connective(Connective::And, &v(&[0.1, 0.2, 0.3]), Some(&m3))
            .is_ok());
        let count = SoftValue::soft_count(2.0).unwrap();
        assert!(matches!(
            t.connective(Connective::And, &count, Some(&s(0.5))),
            Err(TensorError::SoftCountOperand { .. })
        ));
    }

    #[test]
    fn relate_examples() {
        let mut t = Tape::new();
        let beta = SoftValue::matrix(2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let r = t.relate(&v(&[0.0, 1.0]), &beta).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0]);
        let r = t.relate(&v(&[0.0, 0.0]), &beta).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0]);
        let beta = SoftValue::matrix(2, vec![0.6, 0.7, 0.0, 0.0]).unwrap();
        let r = t.relate(&v(&[1.0, 1.0]), &beta).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0]);
        assert!(t.relate(&v(&[1.0]), &beta).is_err());
    }

    #[test]
    fn relate_literal_reads_subject_score() {
        let mut t = Tape::with_relate_mode(RelateMode::Literal);
        let beta = SoftValue::matrix(2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        // alpha_x * sum_y beta_xy: object 0 has a relation but alpha_0 = 0.
        let r = t.relate(&v(&[0.0, 1.0]), &beta).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0]);
        let r = t.relate(&v(&[0.5, 1.0]), &beta).unwrap();
        assert_eq!(r.data(), &[0.5, 0.0]);
    }

    #[test]
    fn quantifiers() {
        let mut t = Tape::new();
        let e = t
            .quantify(Quantifier::Exists, &v(&[0.1, 0.9, 0.3]))
            .unwrap();
        assert_eq!(e.item(), Some(0.9));
        let f = t
            .quantify(Quantifier::Forall, &v(&[0.1, 0.9, 0.3]))
            .unwrap();
        assert_eq!(f.item(), Some(0.1));
        let c = t.quantify(Quantifier::Count, &v(&[0.9, 0.8, 0.1])).unwrap();
        assert!((c.item().unwrap() - 1.8).abs() < 1e-12);
        assert!(c.is_soft_count());
        let i = t.quantify(Quantifier::Iota, &v(&[0.0, 0.0, 0.0])).unwrap();
        for p in i.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(
            t.quantify(Quantifier::Exists, &v(&[])),
            Err(TensorError::EmptyVector)
        ));
        assert!(matches!(
            t.quantify(Quantifier::Count, &s(0.3)),
            Err(TensorError::WrongShape { .. })
        ));
    }

    #[test]
    fn compare_requires_scalars() {
        let mut t = Tape::new();
        let p = SmoothingParams::default();
        assert!(t
            .soft_compare(Comparison::Eq, &v(&[0.1, 0.2]), &s(0.1), p)
            .is_err());
        let c = SoftValue::soft_count(5.0).unwrap();
        let d = SoftValue::soft_count(3.0).unwrap();
        let gt = t.soft_compare(Comparison::Gt, &c, &d, p).unwrap();
        assert!(!gt.is_soft_count());
    }

    #[test]
    fn backward_simple_cases() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.1, 0.9, 0.3]));
        let e = t.quantify(Quantifier::Exists, &x).unwrap();
        let g = t.backward(&e).unwrap();
        assert_eq!(g.get(x.node().unwrap()), Some(&[0.0, 1.0, 0.0][..]));

        let mut t = Tape::new();
        let x = t.leaf(v(&[0.2, 0.4, 0.6, 0.8]));
        let c = t.quantify(Quantifier::Count, &x).unwrap();
        let g = t.backward(&c).unwrap();
        assert_eq!(g.get(x.node().unwrap()), Some(&[1.0; 4][..]));
    }

    #[test]
    fn backward_ties_go_to_lowest_index() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.5, 0.9, 0.9]));
        let e = t.quantify(Quantifier::Exists, &x).unwrap();
        let g = t.backward(&e).unwrap();
        assert_eq!(g.get(x.node().unwrap()), Some(&[0.0, 1.0, 0.0][..]));

        let mut t = Tape::new();
        let a = t.leaf(s(0.4));
        let b = t.leaf(s(0.4));
        let m = t.connective(Connective::And, &a, Some(&b)).unwrap();
        let g = t.backward(&m).unwrap();
        assert_eq!(g.get(a.node().unwrap()), Some(&[1.0][..]));
        assert_eq!(g.get(b.node().unwrap()), Some(&[0.0][..]));
    }

    #[test]
    fn backward_rejects_foreign_or_nonscalar() {
        let t = Tape::new();
        assert!(t.backward(&s(0.3)).is_err());
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.1, 0.2]));
        assert!(matches!(
            t.backward(&x),
            Err(TensorError::NonScalarOutput(_))
        ));
        let mut other = Tape::new();
        let y = other.leaf(s(0.5));
        let _ = other.leaf(s(0.5));
        let _ = other.leaf(s(0.5));
        let fresh = Tape::new();
        assert!(fresh.backward(&y).is_err());
    }

    #[test]
    fn unreached_leaves_get_zero() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[0.1, 0.2]));
        let b = t.leaf(v(&[0.3, 0.4]));
        let e = t.quantify(Quantifier::Forall, &a).unwrap();
        let g = t.backward(&e).unwrap();
        assert_eq!(g.get(b.node().unwrap()), Some(&[0.0, 0.0][..]));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn arithmetic_on_soft_counts() {
        let mut t = Tape::new();
        let a = t.leaf(SoftValue::soft_count(2.0).unwrap());
        let b = SoftValue::soft_count(4.0).unwrap();
        let q = t.arith(ArithKind::Div, &a, &b).unwrap();
        assert_eq!(q.item(), Some(0.5));
        let g = t.backward(&q).unwrap();
        assert_eq!(g.get(a.node().unwrap()), Some(&[0.25][..]));
        let d = t.arith(ArithKind::Sub, &a, &b).unwrap();
        assert_eq!(d.item(), Some(-2.0));
        assert!(matches!(
            t.arith(ArithKind::Add, &a, &s(0.5)),
            Err(TensorError::ProbabilityOperand { .. })
        ));
        let zero = SoftValue::soft_count(0.0).unwrap();
        assert!(matches!(
            t.arith(ArithKind::Div, &a, &zero),
            Err(TensorError::DivisionByZero)
        ));
    }

    #[test]
    fn kink_margin_tracks_min_max_gaps() {
        let mut t = Tape::new();
        assert!(t.kink_margin().is_infinite());
        let x = t.leaf(v(&[0.1, 0.5, 0.45]));
        t.quantify(Quantifier::Exists, &x).unwrap();
        assert!((t.kink_margin() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn index_and_row() {
        let mut t = Tape::new();
        let m = t.leaf(SoftValue::matrix(2, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let r = t.row(&m, 1).unwrap();
        assert_eq!(r.data(), &[0.3, 0.4]);
        let x = t.index(&r, 0).unwrap();
        assert_eq!(x.item(), Some(0.3));
        let g = t.backward(&x).unwrap();
        assert_eq!(g.get(m.node().unwrap()), Some(&[0.0, 0.0, 1.0, 0.0][..]));
        assert!(t.index(&r, 5).is_err());
    }
}
