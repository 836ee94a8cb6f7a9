//! The perception boundary. A [`Grounder`] turns a predicate question into
//! per-object (or per-pair) probabilities, or answers a free-text query.

mod geometric;
pub mod mock;
mod oracle;
mod protocol;
mod remote;
mod scene;
pub mod vocab;

use thiserror::Error;

pub use geometric::{geometric_score, GeometricGrounder};
pub use oracle::{canonical_predicate, OracleGrounder};
pub use protocol::{
    normalize_logits, Arity, GroundingRequest, GroundingResponse, PromptMeta, RequestKind, Targets,
    WireResponse,
};
pub use remote::{RemoteConfig, RemoteGrounder};
pub use scene::{BBox, Relation, Scene, SceneError, SceneObject};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("unknown predicate {0:?}")]
    UnknownPredicate(String),
    #[error("predicate {predicate:?} cannot be asked with num_objects={arity}")]
    ArityMismatch { predicate: String, arity: u8 },
    #[error("cannot answer {0}")]
    UnsupportedQuestion(String),
    #[error("object {0} is not in the scene")]
    UnknownObject(usize),
    #[error("object {0} has no depth estimate")]
    MissingDepth(usize),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("logits must be finite")]
    NonFiniteLogit,
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("grounding service reported an error: {0}")]
    Remote(String),
}

/// Anything that can answer grounding requests about a fixed image.
pub trait Grounder: Send + Sync {
    /// N, the number of objects the image is currently known to contain.
    fn object_count(&self) -> usize;

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError>;

    /// Probabilities for `question` at `arity`, flattened row-major.
    fn score(&self, question: &str, arity: Arity) -> Result<Vec<f64>, GroundingError> {
        let n = self.object_count();
        self.ground(&GroundingRequest::score(question, arity, n))?
            .into_scores(arity, n)
    }

    fn query(&self, question: &str, objects: &[usize]) -> Result<String, GroundingError> {
        self.ground(&GroundingRequest::query(question, objects))?
            .into_text()
    }
}

impl<G: Grounder + ?Sized> Grounder for &G {
    fn object_count(&self) -> usize {
        (**self).object_count()
    }

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        (**self).ground(request)
    }
}

impl<G: Grounder + ?Sized> Grounder for Box<G> {
    fn object_count(&self) -> usize {
        (**self).object_count()
    }

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        (**self).ground(request)
    }
}

/// Candidate objects found for a list of names.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Ids of the chosen objects in the source scene, when known.
    pub source_ids: Vec<usize>,
    /// The candidates re-indexed from zero; its length is N for the run.
    pub scene: Scene,
}

/// Objects of `scene` whose class equals any of `names` (ASCII
/// case-insensitive). An empty result is not an error.
pub fn propose_objects(scene: &Scene, names: &[String]) -> Result<Proposal, GroundingError> {
    if names.is_empty() {
        return Err(GroundingError::InvalidRequest(
            "object proposal needs at least one name".into(),
        ));
    }
    let source_ids: Vec<usize> = scene
        .objects
        .iter()
        .filter(|o| names.iter().any(|n| o.class.eq_ignore_ascii_case(n.trim())))
        .map(|o| o.id)
        .collect();
    Ok(Proposal {
        scene: scene.restrict(&source_ids),
        source_ids,
    })
}

/// Builds a fresh scene from detected boxes: ids in order, no class,
/// attributes or depth.
pub fn scene_from_boxes(boxes: &[BBox], image_ref: Option<String>) -> Scene {
    Scene {
        objects: boxes
            .iter()
            .enumerate()
            .map(|(id, &bbox)| SceneObject {
                id,
                bbox,
                depth: None,
                class: String::new(),
                attributes: Default::default(),
            })
            .collect(),
        relations: Vec::new(),
        image_ref,
    }
}
