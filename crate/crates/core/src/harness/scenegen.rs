//! Random CLEVR-style scenes on a fixed canvas.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::grounding::vocab::{COLORS, MATERIALS, SHAPES, SIZES};
use crate::grounding::{BBox, Relation, Scene, SceneObject};

pub const CANVAS_WIDTH: f64 = 480.0;
pub const CANVAS_HEIGHT: f64 = 320.0;
pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 10;

const PLACEMENT_TRIES: usize = 10_000;

/// Generates a scene of `n_objects` objects, deterministically from `seed`.
///
/// Boxes do not overlap and have pairwise distinct horizontal centers and
/// depths, so every ordered pair of distinct objects is related by exactly
/// one of left/right and one of front/behind.
pub fn gen_scene(seed: u64, n_objects: usize) -> Result<Scene, HarnessError> {
    if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n_objects) {
        return Err(HarnessError::SceneSize(n_objects));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    let mut depths: Vec<f64> = Vec::with_capacity(n_objects);
    for id in 0..n_objects {
        let size = *SIZES.choose(&mut rng).unwrap();
        let color = *COLORS.choose(&mut rng).unwrap();
        let material = *MATERIALS.choose(&mut rng).unwrap();
        let shape = *SHAPES.choose(&mut rng).unwrap();
        let (lo, hi) = if size == "small" {
            (28.0, 42.0)
        } else {
            (50.0, 68.0)
        };
        let bbox = (0..PLACEMENT_TRIES)
            .map(|_| {
                let w: f64 = rng.gen_range(lo..hi);
                let h: f64 = rng.gen_range(lo..hi);
                let x: f64 = rng.gen_range(0.0..CANVAS_WIDTH - w);
                let y: f64 = rng.gen_range(0.0..CANVAS_HEIGHT - h);
                BBox::new(x.round(), y.round(), w.round(), h.round())
            })
            .find(|b| {
                objects
                    .iter()
                    .all(|o| o.bbox.intersection(b) == 0.0 && o.bbox.center_x() != b.center_x())
            })
            .ok_or(HarnessError::Placement(seed))?;
        let depth = loop {
            let d: f64 = (rng.gen_range(1.0..20.0_f64) * 100.0).round() / 100.0;
            if !depths.contains(&d) {
                break d;
            }
        };
        depths.push(depth);
        objects.push(SceneObject {
            id,
            bbox,
            depth: Some(depth),
            class: shape.to_string(),
            attributes: [size, color, material]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        });
    }
    let mut relations = Vec::new();
    for x in 0..n_objects {
        for y in 0..n_objects {
            if x == y {
                continue;
            }
            let (a, b) = (&objects[x], &objects[y]);
            let horizontal = if a.bbox.center_x() < b.bbox.center_x() {
                "left"
            } else {
                "right"
            };
            let depth = if a.depth < b.depth { "front" } else { "behind" };
            relations.push(Relation(x, horizontal.into(), y));
            relations.push(Relation(x, depth.into(), y));
        }
    }
    Ok(Scene {
        objects,
        relations,
        image_ref: Some(format!("scene-{seed}-{n_objects}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = gen_scene(1, 2).unwrap();
        assert_eq!(a, gen_scene(1, 2).unwrap());
        let s = gen_scene(7, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(
            s.objects.iter().map(|o| o.id).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
        s.validate().unwrap();
        for o in &s.objects {
            assert!(o.bbox.x >= 0.0 && o.bbox.x + o.bbox.w <= CANVAS_WIDTH);
            assert!(o.bbox.y >= 0.0 && o.bbox.y + o.bbox.h <= CANVAS_HEIGHT);
        }
    }

    #[test]
    fn sizes_out_of_range() {
        assert!(matches!(gen_scene(0, 1), Err(HarnessError::SceneSize(1))));
        assert!(matches!(gen_scene(0, 11), Err(HarnessError::SceneSize(11))));
        gen_scene(0, 10).unwrap();
    }
}
