//! Benchmark harness: synthetic scenes, question generation with
//! brute-force ground truth, corpora and evaluation.

mod corpus;
mod eval;
pub mod logic;
mod noise;
mod questions;
mod scenegen;

use thiserror::Error;

pub use corpus::{read_corpus, write_corpus, CorpusRecord, SceneSource};
pub use eval::{evaluate, is_correct, CategoryStats, EvalConfig, ItemResult, Report, VerifyReport};
pub use logic::{brute_force, GroundTruth};
pub use noise::NoisyGrounder;
pub use questions::{gen_corpus, gen_question, simulate_backbone, Category, QuestionSpec};
pub use scenegen::{gen_scene, CANVAS_HEIGHT, CANVAS_WIDTH, MAX_OBJECTS, MIN_OBJECTS};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenes hold between 2 and 10 objects, got {0}")]
    SceneSize(usize),
    #[error("could not place non-overlapping objects for seed {0}")]
    Placement(u64),
    #[error("no {category} question fits this scene after {tries} tries")]
    Unsatisfiable { category: Category, tries: usize },
    #[error("predicate {0:?} is not supported by the brute-force evaluator")]
    UnsupportedPredicate(String),
    #[error("expected exactly one matching object, found {0}")]
    NotUnique(usize),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Scene(#[from] crate::grounding::SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
