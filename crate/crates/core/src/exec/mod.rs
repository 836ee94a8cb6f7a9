//! Tree-walking interpreter for reasoning programs.
//!
//! Control flow (`if`, `for`, assignment) runs over crisp values, while
//! predicate scores flow through the soft operator algebra on a [`Tape`].
//! Branching on a soft value thresholds it at 0.5 and is recorded in
//! [`Outcome::soft_branch`], since no gradient flows through such a branch.

mod interp;
mod value;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{Arity, Grounder, GroundingError};
use crate::lang::{line_col, Program, Span};
use crate::tensor::{NodeId, Shape, SmoothingParams, TensorError};

pub use interp::Executor;
pub use value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Visual question answering: yes/no, count or text answers.
    #[default]
    Vqa,
    /// Referring expression grounding: the answer is one object.
    Reg,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "vqa" => Ok(Task::Vqa),
            "reg" => Ok(Task::Reg),
            other => Err(format!("unknown task {other:?} (expected vqa or reg)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Vqa => "vqa",
            Task::Reg => "reg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecOptions {
    pub task: Task,
    /// Run backward() from the answer and report adjoints per score call.
    pub gradients: bool,
    /// Use `alpha_x * sum_y beta_xy` for relational conjunction.
    pub relate_literal: bool,
    /// Maximum statements plus expressions evaluated.
    pub step_budget: usize,
    /// Maximum grounder invocations.
    pub call_budget: usize,
    pub smoothing: SmoothingParams,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            task: Task::Vqa,
            gradients: false,
            relate_literal: false,
            step_budget: 100_000,
            call_budget: 1_000,
            smoothing: SmoothingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Answer {
    YesNo {
        value: bool,
        score: f64,
    },
    Count {
        value: i64,
        raw: f64,
    },
    Integer {
        value: i64,
    },
    Real {
        value: f64,
    },
    Text {
        value: String,
    },
    ObjectRef {
        id: usize,
        distribution: Vec<f64>,
    },
    /// The scene has no candidate objects to reason about.
    NoObjects,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::YesNo { value, score } => {
                write!(
                    f,
                    "{} (score={score:.3})",
                    if *value { "yes" } else { "no" }
                )
            }
            Answer::Count { value, raw } => write!(f, "{value} (soft count={raw:.3})"),
            Answer::Integer { value } => write!(f, "{value}"),
            Answer::Real { value } => write!(f, "{value}"),
            Answer::Text { value } => f.write_str(value),
            Answer::ObjectRef { id, distribution } => {
                write!(f, "object {id} (p={:.3})", distribution[*id])
            }
            Answer::NoObjects => f.write_str("no objects"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Score,
    Query,
}

/// One grounder invocation, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arity: Option<Arity>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub span: Span,
    #[serde(skip)]
    pub(crate) node: Option<NodeId>,
}

/// Adjoints of the answer with respect to one `score` call's output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteGradient {
    /// Index into [`Outcome::trace`].
    pub call: usize,
    pub question: String,
    pub span: Span,
    pub adjoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub answer: Answer,
    pub trace: Vec<CallRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradients: Option<Vec<SiteGradient>>,
    /// True if control flow branched on a soft value.
    pub soft_branch: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecErrorKind {
    #[error("name {0:?} is not defined")]
    UnboundName(String),
    #[error("{0}")]
    Type(String),
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("grounding failed: {0}")]
    Grounding(#[from] GroundingError),
    #[error("program finished without a return statement")]
    MissingReturn,
    #[error("step budget of {0} exceeded")]
    StepBudget(usize),
    #[error("grounding call budget of {0} exceeded")]
    CallBudget(usize),
    #[error("cannot turn the returned {0} into an answer")]
    InvalidAnswer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub span: Option<Span>,
}

impl ExecError {
    pub fn new(kind: impl Into<ExecErrorKind>, span: Span) -> Self {
        ExecError {
            kind: kind.into(),
            span: Some(span),
        }
    }

    pub fn bare(kind: impl Into<ExecErrorKind>) -> Self {
        ExecError {
            kind: kind.into(),
            span: None,
        }
    }

    /// 1-based line and column of the offending expression in `source`.
    pub fn location(&self, source: &str) -> Option<(usize, usize)> {
        self.span.map(|s| line_col(source, s.start))
    }

    /// The message prefixed with `line:col` when the span is known.
    pub fn render(&self, source: &str) -> String {
        match self.location(source) {
            Some((line, col)) => format!("{line}:{col}: {}", self.kind),
            None => self.kind.to_string(),
        }
    }

    pub fn is_grounding(&self) -> bool {
        matches!(self.kind, ExecErrorKind::Grounding(_))
    }
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span {
            Some(s) => write!(f, "{} (at bytes {}..{})", self.kind, s.start, s.end),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl std::error::Error for ExecError {}

/// Executes `program` against `grounder` and finalizes its answer.
pub fn run(
    program: &Program,
    grounder: &dyn Grounder,
    opts: &ExecOptions,
) -> Result<Outcome, ExecError> {
    Executor::new(grounder, *opts)?.run(program)
}
