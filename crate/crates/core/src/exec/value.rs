use std::fmt;

use crate::tensor::{Shape, SoftValue};

/// A runtime value of the reasoning language.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// Probability scalar, per-object vector or pairwise matrix.
    Soft(SoftValue),
    /// Scalar soft count (sum of probabilities, arithmetic over counts).
    SoftCount(SoftValue),
    Text(String),
    Integer(i64),
    Real(f64),
    Boolean(bool),
    List(Vec<Value>),
    /// One step of iterating a per-object vector: the object id and its
    /// score. Acts as the id where an object is expected and as the score
    /// everywhere else.
    ObjectScore {
        id: usize,
        score: SoftValue,
    },
}

impl Value {
    pub fn type_name(&self) -> String {
        match self {
            Value::Soft(v) => match v.shape() {
                Shape::Scalar => "soft scalar".into(),
                Shape::Vector(n) => format!("soft vector({n})"),
                Shape::Matrix(n) => format!("soft matrix({n}x{n})"),
            },
            Value::SoftCount(_) => "soft count".into(),
            Value::Text(_) => "text".into(),
            Value::Integer(_) => "integer".into(),
            Value::Real(_) => "real".into(),
            Value::Boolean(_) => "boolean".into(),
            Value::List(_) => "list".into(),
            Value::ObjectScore { .. } => "object score".into(),
        }
    }

    /// Crisp number, if the value is one.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Object id, if the value names one.
    pub fn as_object_id(&self) -> Option<i64> {
        match self {
            Value::Integer(i) => Some(*i),
            Value::ObjectScore { id, .. } => Some(*id as i64),
            _ => None,
        }
    }

    /// `ObjectScore` decays to its score; everything else is unchanged.
    pub fn decay(self) -> Value {
        match self {
            Value::ObjectScore { score, .. } => Value::Soft(score),
            other => other,
        }
    }
}

fn fmt_real(f: &mut fmt::Formatter<'_>, x: f64) -> fmt::Result {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        write!(f, "{x:.1}")
    } else {
        write!(f, "{x}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Soft(v) | Value::SoftCount(v) => match v.item() {
                Some(x) => fmt_real(f, x),
                None => write!(f, "{:?}", v.data()),
            },
            Value::Text(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => fmt_real(f, *r),
            Value::Boolean(b) => f.write_str(if *b { "True" } else { "False" }),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    match item {
                        Value::Text(s) => write!(f, "{s:?}")?,
                        other => write!(f, "{other}")?,
                    }
                }
                f.write_str("]")
            }
            Value::ObjectScore { id, score } => {
                write!(f, "({id}, ")?;
                fmt_real(f, score.data()[0])?;
                f.write_str(")")
            }
        }
    }
}
