//! Spatial predicates computed from box centers and depth estimates.

use std::sync::Arc;

use super::vocab::SPATIAL;
use super::{
    canonical_predicate, Arity, Grounder, GroundingError, GroundingRequest, GroundingResponse,
    OracleGrounder, RequestKind, Scene,
};

/// Pairwise matrix for `left`, `right`, `front` or `behind`, row-major with
/// entry `(x, y)` reading "x is <predicate> y". Strict comparisons, so ties
/// and the diagonal score 0.
pub fn geometric_score(scene: &Scene, predicate: &str) -> Result<Vec<f64>, GroundingError> {
    let n = scene.len();
    let key: Box<dyn Fn(usize) -> Result<f64, GroundingError>> = match predicate {
        "left" | "right" => Box::new(|i| Ok(scene.objects[i].bbox.center_x())),
        "front" | "behind" => Box::new(|i| {
            scene.objects[i]
                .depth
                .filter(|d| d.is_finite())
                .ok_or(GroundingError::MissingDepth(i))
        }),
        other => return Err(GroundingError::UnknownPredicate(other.to_string())),
    };
    let keys = (0..n).map(key).collect::<Result<Vec<_>, _>>()?;
    let less = matches!(predicate, "left" | "front");
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            let holds = if less {
                keys[x] < keys[y]
            } else {
                keys[x] > keys[y]
            };
            if holds {
                out[x * n + y] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Answers spatial relations geometrically and defers everything else to
/// an oracle over the same scene.
#[derive(Debug, Clone)]
pub struct GeometricGrounder {
    scene: Arc<Scene>,
    oracle: OracleGrounder,
}

impl GeometricGrounder {
    pub fn new(scene: impl Into<Arc<Scene>>) -> Self {
        let scene = scene.into();
        GeometricGrounder {
            oracle: OracleGrounder::new(Arc::clone(&scene)),
            scene,
        }
    }

    pub fn with_oracle(mut self, oracle: OracleGrounder) -> Self {
        self.oracle = oracle;
        self
    }
}

impl Grounder for GeometricGrounder {
    fn object_count(&self) -> usize {
        self.scene.len()
    }

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        if request.kind == RequestKind::Score {
            let pred = canonical_predicate(request.question_text());
            if SPATIAL.contains(&pred.as_str()) {
                let matrix = geometric_score(&self.scene, &pred)?;
                return match request.arity()? {
                    Arity::Pair => Ok(GroundingResponse::Scores(matrix)),
                    Arity::Image => Ok(GroundingResponse::Scores(vec![if matrix.contains(&1.0) {
                        1.0
                    } else {
                        0.0
                    }])),
                    Arity::Object => Err(GroundingError::ArityMismatch {
                        predicate: pred,
                        arity: 1,
                    }),
                };
            }
        }
        self.oracle.ground(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{BBox, SceneObject};

    fn at(id: usize, cx: f64, depth: Option<f64>) -> SceneObject {
        SceneObject {
            id,
            bbox: BBox::new(cx - 5.0, 0.0, 10.0, 10.0),
            depth,
            class: "cube".into(),
            attributes: Default::default(),
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene {
            objects,
            relations: vec![],
            image_ref: None,
        }
    }

    #[test]
    fn left_right_from_centers() {
        let s = scene(vec![at(0, 10.0, Some(3.0)), at(1, 50.0, Some(7.0))]);
        let left = geometric_score(&s, "left").unwrap();
        assert_eq!(left, vec![0.0, 1.0, 0.0, 0.0]);
        let behind = geometric_score(&s, "behind").unwrap();
        assert_eq!(behind[2], 1.0);
        assert_eq!(behind[1], 0.0);
    }

    #[test]
    fn equal_centers_score_zero_both_ways() {
        let s = scene(vec![at(0, 20.0, None), at(1, 20.0, None)]);
        assert_eq!(geometric_score(&s, "left").unwrap(), vec![0.0; 4]);
        assert_eq!(geometric_score(&s, "right").unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn missing_depth_is_an_error() {
        let s = scene(vec![at(0, 20.0, Some(1.0)), at(1, 30.0, None)]);
        assert_eq!(
            geometric_score(&s, "front"),
            Err(GroundingError::MissingDepth(1))
        );
    }

    #[test]
    fn grounder_delegates_non_spatial_predicates() {
        let s = scene(vec![at(0, 10.0, Some(1.0)), at(1, 50.0, Some(2.0))]);
        let g = GeometricGrounder::new(s);
        assert_eq!(g.score("cube", Arity::Object).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            g.score("to the left of", Arity::Pair).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0]
        );
    }
}
