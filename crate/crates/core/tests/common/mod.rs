//! Reference evaluators and generators shared by the integration tests.
//! Nothing here calls into the library's numeric helpers.
#![allow(dead_code)]

use nept_core::tensor::{
    ArithKind, Comparison, Connective, Quantifier, SmoothingParams, SoftValue, Tape,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Logistic function written out directly.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain `e^x / sum e^x`; fine for the small inputs used in tests.
pub fn softmax_ref(xs: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Lowest index of the maximum.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Box IoU from corner coordinates, computed independently of `BBox`.
pub fn iou_ref(a: [f64; 4], b: [f64; 4]) -> f64 {
    let (ax2, ay2, bx2, by2) = (a[0] + a[2], a[1] + a[3], b[0] + b[2], b[1] + b[3]);
    let iw = (ax2.min(bx2) - a[0].max(b[0])).max(0.0);
    let ih = (ay2.min(by2) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// A differentiable expression over vector and matrix leaves.
#[derive(Debug, Clone)]
pub enum Expr {
    Vector(usize),
    Not(Box<Expr>),
    Binary(Connective, Box<Expr>, Box<Expr>),
    /// Relational conjunction with a matrix leaf.
    Relate(Box<Expr>, usize),
    Quantify(Quantifier, Box<Expr>),
    Index(Box<Expr>, usize),
    Compare(Comparison, Box<Expr>, Box<Expr>),
    Arith(ArithKind, Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
}

impl Expr {
    pub fn height(&self) -> usize {
        match self {
            Expr::Vector(_) => 1,
            Expr::Not(a)
            | Expr::Relate(a, _)
            | Expr::Quantify(_, a)
            | Expr::Index(a, _)
            | Expr::Abs(a) => 1 + a.height(),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) | Expr::Arith(_, a, b) => {
                1 + a.height().max(b.height())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ty {
    Vector,
    Prob,
    Count,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub n: usize,
    pub vectors: Vec<Vec<f64>>,
    pub matrices: Vec<Vec<f64>>,
    pub root: Expr,
}

const LEAVES: usize = 3;

fn leaf_value(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0.01..0.99)
}

fn gen(rng: &mut ChaCha8Rng, ty: Ty, height: usize, n: usize) -> Expr {
    let b = Box::new;
    match ty {
        Ty::Vector => {
            if height <= 1 || rng.gen_bool(0.25) {
                return Expr::Vector(rng.gen_range(0..LEAVES));
            }
            match rng.gen_range(0..6) {
                0 => Expr::Not(b(gen(rng, Ty::Vector, height - 1, n))),
                1 => Expr::Relate(
                    b(gen(rng, Ty::Vector, height - 1, n)),
                    rng.gen_range(0..LEAVES),
                ),
                2 => Expr::Quantify(Quantifier::Iota, b(gen(rng, Ty::Vector, height - 1, n))),
                k => {
                    let c = [Connective::And, Connective::Or, Connective::Implies][k - 3];
                    Expr::Binary(
                        c,
                        b(gen(rng, Ty::Vector, height - 1, n)),
                        b(gen(rng, Ty::Vector, height - 1, n)),
                    )
                }
            }
        }
        Ty::Prob => {
            let choice = if height < 3 {
                rng.gen_range(0..2)
            } else {
                rng.gen_range(0..6)
            };
            match choice {
                0 => {
                    let q = if rng.gen_bool(0.5) {
                        Quantifier::Exists
                    } else {
                        Quantifier::Forall
                    };
                    Expr::Quantify(q, b(gen(rng, Ty::Vector, height - 1, n)))
                }
                1 => Expr::Index(b(gen(rng, Ty::Vector, height - 1, n)), rng.gen_range(0..n)),
                2 => Expr::Not(b(gen(rng, Ty::Prob, height - 1, n))),
                3 => {
                    let c =
                        [Connective::And, Connective::Or, Connective::Implies][rng.gen_range(0..3)];
                    Expr::Binary(
                        c,
                        b(gen(rng, Ty::Prob, height - 1, n)),
                        b(gen(rng, Ty::Prob, height - 1, n)),
                    )
                }
                _ => {
                    let c = if rng.gen_bool(0.5) {
                        Comparison::Gt
                    } else {
                        Comparison::Eq
                    };
                    Expr::Compare(
                        c,
                        b(gen(rng, Ty::Count, height - 1, n)),
                        b(gen(rng, Ty::Count, height - 1, n)),
                    )
                }
            }
        }
        Ty::Count => {
            let choice = if height < 3 { 0 } else { rng.gen_range(0..4) };
            match choice {
                0 => Expr::Quantify(Quantifier::Count, b(gen(rng, Ty::Vector, height - 1, n))),
                1 => Expr::Abs(b(gen(rng, Ty::Count, height - 1, n))),
                k => {
                    let op = if k == 2 {
                        ArithKind::Add
                    } else {
                        ArithKind::Sub
                    };
                    let op = if rng.gen_bool(0.2) {
                        ArithKind::Mul
                    } else {
                        op
                    };
                    Expr::Arith(
                        op,
                        b(gen(rng, Ty::Count, height - 1, n)),
                        b(gen(rng, Ty::Count, height - 1, n)),
                    )
                }
            }
        }
    }
}

/// A random scalar-valued expression of height at most `max_height` over
/// `N <= max_n` objects, with leaf entries in [0.01, 0.99].
pub fn random_problem(rng: &mut ChaCha8Rng, max_height: usize, max_n: usize) -> Problem {
    let n = rng.gen_range(1..=max_n);
    let ty = if rng.gen_bool(0.7) {
        Ty::Prob
    } else {
        Ty::Count
    };
    let height = rng.gen_range(2..=max_height);
    let root = gen(rng, ty, height, n);
    Problem {
        n,
        vectors: (0..LEAVES)
            .map(|_| (0..n).map(|_| leaf_value(rng)).collect())
            .collect(),
        matrices: (0..LEAVES)
            .map(|_| (0..n * n).map(|_| leaf_value(rng)).collect())
            .collect(),
        root,
    }
}

pub struct Evaluated {
    pub tape: Tape,
    pub output: SoftValue,
    pub vector_leaves: Vec<SoftValue>,
    pub matrix_leaves: Vec<SoftValue>,
}

fn build(tape: &mut Tape, e: &Expr, vs: &[SoftValue], ms: &[SoftValue]) -> SoftValue {
    let p = SmoothingParams::default();
    match e {
        Expr::Vector(i) => vs[*i].clone(),
        Expr::Not(a) => {
            let a = build(tape, a, vs, ms);
            tape.connective(Connective::Not, &a, None).unwrap()
        }
        Expr::Binary(c, a, b) => {
            let (a, b) = (build(tape, a, vs, ms), build(tape, b, vs, ms));
            tape.connective(*c, &a, Some(&b)).unwrap()
        }
        Expr::Relate(a, m) => {
            let a = build(tape, a, vs, ms);
            tape.relate(&a, &ms[*m]).unwrap()
        }
        Expr::Quantify(q, a) => {
            let a = build(tape, a, vs, ms);
            tape.quantify(*q, &a).unwrap()
        }
        Expr::Index(a, i) => {
            let a = build(tape, a, vs, ms);
            tape.index(&a, *i).unwrap()
        }
        Expr::Compare(c, a, b) => {
            let (a, b) = (build(tape, a, vs, ms), build(tape, b, vs, ms));
            tape.soft_compare(*c, &a, &b, p).unwrap()
        }
        Expr::Arith(k, a, b) => {
            let (a, b) = (build(tape, a, vs, ms), build(tape, b, vs, ms));
            tape.arith(*k, &a, &b).unwrap()
        }
        Expr::Abs(a) => {
            let a = build(tape, a, vs, ms);
            tape.abs(&a).unwrap()
        }
    }
}

pub fn evaluate(p: &Problem) -> Evaluated {
    let mut tape = Tape::new();
    let vector_leaves: Vec<SoftValue> = p
        .vectors
        .iter()
        .map(|v| tape.leaf(SoftValue::vector(v.clone()).unwrap()))
        .collect();
    let matrix_leaves: Vec<SoftValue> = p
        .matrices
        .iter()
        .map(|m| tape.leaf(SoftValue::matrix(p.n, m.clone()).unwrap()))
        .collect();
    let output = build(&mut tape, &p.root, &vector_leaves, &matrix_leaves);
    Evaluated {
        tape,
        output,
        vector_leaves,
        matrix_leaves,
    }
}

pub fn value(p: &Problem) -> f64 {
    evaluate(p).output.item().unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub entries: usize,
}

/// Compares reverse-mode adjoints of every leaf entry against central
/// differences. `None` if the point is too close to a kink.
pub fn gradient_check(p: &Problem, h: f64, min_margin: f64) -> Option<GradCheck> {
    let ev = evaluate(p);
    if ev.tape.kink_margin() < min_margin {
        return None;
    }
    let grads = ev.tape.backward(&ev.output).unwrap();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut check = |analytic: &[f64], perturb: &dyn Fn(&mut Problem, usize, f64)| {
        for (j, &g) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            perturb(&mut plus, j, h);
            let mut minus = p.clone();
            perturb(&mut minus, j, -h);
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
            entries += 1;
        }
    };
    for (k, leaf) in ev.vector_leaves.iter().enumerate() {
        let zero = vec![0.0; p.n];
        let g = leaf
            .node()
            .and_then(|id| grads.get(id))
            .unwrap_or(&zero)
            .to_vec();
        check(&g, &|q: &mut Problem, j, d| q.vectors[k][j] += d);
    }
    for (k, leaf) in ev.matrix_leaves.iter().enumerate() {
        let zero = vec![0.0; p.n * p.n];
        let g = leaf
            .node()
            .and_then(|id| grads.get(id))
            .unwrap_or(&zero)
            .to_vec();
        check(&g, &|q: &mut Problem, j, d| q.matrices[k][j] += d);
    }
    Some(GradCheck {
        max_rel_error: worst,
        entries,
    })
}
