//! Exact grounding from a stored scene graph.
//!
//! The oracle understands bare predicate tokens (`"red"`, `"behind"`,
//! `"same color"`) and the canonical visual-prompt question templates, which
//! it reduces to those tokens.

use std::sync::Arc;

use super::vocab::{self, AttributeKind};
use super::{
    Arity, Grounder, GroundingError, GroundingRequest, GroundingResponse, RequestKind, Scene,
};

/// Leading phrasings of single-object templates.
const OBJECT_PREFIXES: &[&str] = &[
    "is the object in the red bounding box",
    "is the object inside of the red bounding box",
    "is the object inside the red bounding box",
    "is the object in the red box",
];
const PAIR_PREFIX: &str = "is the object in the red bounding box";
const PAIR_SUFFIX: &str = "the object in the green bounding box";

/// Reduces a question to its predicate token: lower-cased, template
/// wrapper and articles removed, relation phrasings canonicalised.
pub fn canonical_predicate(question: &str) -> String {
    let mut q = question.trim().to_ascii_lowercase();
    while q.ends_with('?') || q.ends_with('.') {
        q.pop();
    }
    let mut q = q.trim().to_string();
    if let Some(rest) = q.strip_prefix(PAIR_PREFIX) {
        if let Some(mid) = rest.trim().strip_suffix(PAIR_SUFFIX) {
            q = mid.trim().to_string();
        }
    }
    for prefix in OBJECT_PREFIXES {
        if let Some(rest) = q.strip_prefix(prefix) {
            q = rest.trim().to_string();
            break;
        }
    }
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = q.strip_prefix(article) {
            q = rest.to_string();
            break;
        }
    }
    let q = q.split_whitespace().collect::<Vec<_>>().join(" ");
    vocab::canonical_relation(&q).unwrap_or(q)
}

#[derive(Debug, Clone)]
pub struct OracleGrounder {
    scene: Arc<Scene>,
    analogical_diagonal: bool,
}

impl OracleGrounder {
    pub fn new(scene: impl Into<Arc<Scene>>) -> Self {
        OracleGrounder {
            scene: scene.into(),
            analogical_diagonal: false,
        }
    }

    /// Whether an object counts as "same color" etc. as itself (default no).
    pub fn with_analogical_diagonal(mut self, include: bool) -> Self {
        self.analogical_diagonal = include;
        self
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    fn is_unary(&self, pred: &str) -> bool {
        vocab::is_attribute_value(pred) || self.scene.objects.iter().any(|o| o.has(pred))
    }

    fn is_relational(&self, pred: &str) -> bool {
        vocab::SPATIAL.contains(&pred)
            || vocab::analogical_kind(pred).is_some()
            || self.scene.relation_predicates().contains(pred)
    }

    fn unary_scores(&self, pred: &str) -> Vec<f64> {
        self.scene
            .objects
            .iter()
            .map(|o| if o.has(pred) { 1.0 } else { 0.0 })
            .collect()
    }

    fn pair_scores(&self, pred: &str) -> Vec<f64> {
        let n = self.scene.len();
        let mut out = vec![0.0; n * n];
        if let Some(kind) = vocab::analogical_kind(pred) {
            let values: Vec<Option<String>> = self
                .scene
                .objects
                .iter()
                .map(|o| vocab::attribute_of(o, kind))
                .collect();
            for x in 0..n {
                for y in 0..n {
                    if x == y && !self.analogical_diagonal {
                        continue;
                    }
                    if values[x].is_some() && values[x] == values[y] {
                        out[x * n + y] = 1.0;
                    }
                }
            }
        } else {
            for r in &self.scene.relations {
                if r.1.eq_ignore_ascii_case(pred) {
                    out[r.0 * n + r.2] = 1.0;
                }
            }
        }
        out
    }

    /// Scores of `question` at `arity`, each in {0, 1}.
    pub fn score(&self, question: &str, arity: Arity) -> Result<Vec<f64>, GroundingError> {
        let pred = canonical_predicate(question);
        let unary = self.is_unary(&pred);
        let relational = self.is_relational(&pred);
        if !unary && !relational {
            return Err(GroundingError::UnknownPredicate(question.to_string()));
        }
        match arity {
            Arity::Object if unary => Ok(self.unary_scores(&pred)),
            Arity::Pair if relational => Ok(self.pair_scores(&pred)),
            // Image-level: does any object (or ordered pair) satisfy it.
            Arity::Image => {
                let any = if unary {
                    self.unary_scores(&pred).contains(&1.0)
                } else {
                    self.pair_scores(&pred).contains(&1.0)
                };
                Ok(vec![if any { 1.0 } else { 0.0 }])
            }
            _ => Err(GroundingError::ArityMismatch {
                predicate: pred,
                arity: arity.into(),
            }),
        }
    }

    /// Free-text answer about one object: its color, shape, size, material
    /// or class, depending on which the question asks for.
    pub fn answer(&self, question: &str, objects: &[usize]) -> Result<String, GroundingError> {
        let &[id] = objects else {
            return Err(GroundingError::UnsupportedQuestion(format!(
                "{question:?} (the oracle answers questions about exactly one object)"
            )));
        };
        let object = self
            .scene
            .objects
            .get(id)
            .ok_or(GroundingError::UnknownObject(id))?;
        let q = question.to_ascii_lowercase();
        let kind = AttributeKind::ALL
            .into_iter()
            .find(|k| q.contains(k.name()))
            .or_else(|| {
                ["class", "what is", "which object", "name"]
                    .iter()
                    .any(|w| q.contains(w))
                    .then_some(AttributeKind::Shape)
            })
            .ok_or_else(|| GroundingError::UnsupportedQuestion(question.to_string()))?;
        vocab::attribute_of(object, kind).ok_or_else(|| {
            GroundingError::UnsupportedQuestion(format!(
                "object {id} has no {} attribute",
                kind.name()
            ))
        })
    }
}

impl Grounder for OracleGrounder {
    fn object_count(&self) -> usize {
        self.scene.len()
    }

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        match request.kind {
            RequestKind::Score => Ok(GroundingResponse::Scores(
                self.score(request.question_text(), request.arity()?)?,
            )),
            RequestKind::Query => Ok(GroundingResponse::Text(
                self.answer(request.question_text(), &request.query_objects())?,
            )),
            RequestKind::Detect => {
                let names = request.names.clone().unwrap_or_default();
                let proposal = super::propose_objects(&self.scene, &names)?;
                Ok(GroundingResponse::Boxes(
                    proposal.scene.objects.iter().map(|o| o.bbox).collect(),
                ))
            }
        }
    }
}
