//! Scene graphs: objects with boxes, depth, class and attributes, plus
//! directed relations.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object at position {position} has id {id}; ids must be 0..N-1 in order")]
    NonContiguousId { position: usize, id: usize },
    #[error("object {0} has a non-positive or non-finite box size")]
    BadBox(usize),
    #[error("relation ({0}, {1:?}, {2}) refers to an unknown object")]
    BadRelation(usize, String, usize),
    #[error("invalid scene document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read scene: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box `[x, y, w, h]` in pixels, `(x, y)` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center_x(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn center_y(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let h = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        w.max(0.0) * h.max(0.0)
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Larger is farther from the camera.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default)]
    pub class: String,
    #[serde(default)]
    pub attributes: BTreeSet<String>,
}

impl SceneObject {
    /// True if the class or any attribute equals `predicate` (ASCII
    /// case-insensitive).
    pub fn has(&self, predicate: &str) -> bool {
        self.class.eq_ignore_ascii_case(predicate)
            || self
                .attributes
                .iter()
                .any(|a| a.eq_ignore_ascii_case(predicate))
    }
}

/// `(subject, predicate, object)`, serialized as a three-element array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation(pub usize, pub String, pub usize);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (position, o) in self.objects.iter().enumerate() {
            if o.id != position {
                return Err(SceneError::NonContiguousId { position, id: o.id });
            }
            let b = o.bbox;
            let finite = [b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite());
            if !finite || b.w <= 0.0 || b.h <= 0.0 {
                return Err(SceneError::BadBox(o.id));
            }
        }
        let n = self.objects.len();
        for Relation(s, p, o) in &self.relations {
            if *s >= n || *o >= n {
                return Err(SceneError::BadRelation(*s, p.clone(), *o));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn has_relation(&self, subject: usize, predicate: &str, object: usize) -> bool {
        self.relations.iter().any(|Relation(s, p, o)| {
            *s == subject && *o == object && p.eq_ignore_ascii_case(predicate)
        })
    }

    pub fn relation_predicates(&self) -> BTreeSet<String> {
        self.relations
            .iter()
            .map(|r| r.1.to_ascii_lowercase())
            .collect()
    }

    /// The sub-scene of `ids` (in the given order), re-indexed from zero.
    /// Relations between kept objects are carried over.
    pub fn restrict(&self, ids: &[usize]) -> Scene {
        let mut remap = vec![None; self.objects.len()];
        let objects = ids
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                remap[old] = Some(new);
                SceneObject {
                    id: new,
                    ..self.objects[old].clone()
                }
            })
            .collect();
        let relations = self
            .relations
            .iter()
            .filter_map(|Relation(s, p, o)| Some(Relation(remap[*s]?, p.clone(), remap[*o]?)))
            .collect();
        Scene {
            objects,
            relations,
            image_ref: self.image_ref.clone(),
        }
    }
}
