//! Soft-valued tensors and the fuzzy operator algebra.
//!
//! A [`SoftValue`] is a scalar, a length-`N` vector, or an `N x N` matrix of
//! probabilities in `[0, 1]`. Vectors hold per-object scores, matrices hold
//! relation scores indexed `(subject, object)`. Soft counts are scalars of
//! the [`Flavor::SoftCount`] flavor: unclamped reals produced by summing a
//! vector, consumable only by comparisons, arithmetic, and rounding.
//!
//! Every operator lives on a [`Tape`], which records the forward values so
//! that [`Tape::backward`] can compute reverse-mode adjoints with respect to
//! the leaves (typically the grounding scores of one program run).

mod ops;
mod tape;

pub use ops::{sigmoid, softmax};
pub use tape::{ArithKind, Gradients, NodeId, RelateMode, Tape};

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("expected {expected} elements for shape {shape}, got {got}")]
    DataLength {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {op} is undefined for {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op} expects {expected}, got {got}")]
    WrongShape {
        op: &'static str,
        expected: &'static str,
        got: Shape,
    },
    #[error("{op} does not accept a soft count operand")]
    SoftCountOperand { op: &'static str },
    #[error("{op} expects a soft count or a number")]
    ProbabilityOperand { op: &'static str },
    #[error("{0} takes exactly one operand")]
    UnaryArity(&'static str),
    #[error("{0} takes two operands")]
    BinaryArity(&'static str),
    #[error("cannot quantify over an empty vector")]
    EmptyVector,
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("node {0} is not recorded on this tape")]
    ForeignNode(usize),
    #[error("backward() requires a scalar output, got {0}")]
    NonScalarOutput(Shape),
    #[error("invalid smoothing parameters: tau={tau}, gamma={gamma}")]
    InvalidSmoothing { tau: f64, gamma: f64 },
    #[error("division by zero")]
    DivisionByZero,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(n) => n * n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "Scalar"),
            Shape::Vector(n) => write!(f, "Vector({n})"),
            Shape::Matrix(n) => write!(f, "Matrix({n},{n})"),
        }
    }
}

/// Whether a value is a probability (bounded in `[0, 1]`) or a soft count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    Probability,
    SoftCount,
}

/// An immutable probability tensor, optionally bound to a tape node.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftValue {
    shape: Shape,
    flavor: Flavor,
    data: Arc<[f64]>,
    node: Option<NodeId>,
}

fn check_unit_interval(data: &[f64]) -> Result<()> {
    for (index, &value) in data.iter().enumerate() {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(index));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(TensorError::OutOfRange { index, value });
        }
    }
    Ok(())
}

impl SoftValue {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.len(),
                got: data.len(),
            });
        }
        check_unit_interval(&data)?;
        Ok(SoftValue {
            shape,
            flavor: Flavor::Probability,
            data: data.into(),
            node: None,
        })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Shape::Scalar, vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::Vector(data.len()), data)
    }

    /// Builds an `n x n` matrix from row-major data.
    pub fn matrix(n: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::Matrix(n), data)
    }

    /// A soft count: any finite non-negative real.
    pub fn soft_count(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(0));
        }
        if value < 0.0 {
            return Err(TensorError::OutOfRange { index: 0, value });
        }
        Ok(SoftValue {
            shape: Shape::Scalar,
            flavor: Flavor::SoftCount,
            data: vec![value].into(),
            node: None,
        })
    }

    /// Internal constructor for operator results whose range was established
    /// by the operator itself.
    pub(crate) fn from_parts(shape: Shape, flavor: Flavor, data: Vec<f64>, node: NodeId) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        SoftValue {
            shape,
            flavor,
            data: data.into(),
            node: Some(node),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn is_soft_count(&self) -> bool {
        self.flavor == Flavor::SoftCount
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// The single element of a scalar.
    pub fn item(&self) -> Option<f64> {
        match self.shape {
            Shape::Scalar => Some(self.data[0]),
            _ => None,
        }
    }

    /// The same value detached from any tape.
    pub fn detached(&self) -> Self {
        SoftValue {
            node: None,
            ..self.clone()
        }
    }
}

/// Temperature and margin of the smoothed comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub tau: f64,
    pub gamma: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams {
            tau: 0.25,
            gamma: 0.25,
        }
    }
}

impl SmoothingParams {
    pub fn new(tau: f64, gamma: f64) -> Result<Self> {
        let p = SmoothingParams { tau, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau.is_finite() && self.tau > 0.0 && self.gamma > 0.0 && self.gamma <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidSmoothing {
                tau: self.tau,
                gamma: self.gamma,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connective {
    And,
    Or,
    Implies,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    Exists,
    Forall,
    Count,
    Iota,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    Eq,
    Gt,
}
