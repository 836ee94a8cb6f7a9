//! Question templates: sample a logical form that fits the scene, then
//! derive its English text, its program and its brute-force answer.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusRecord, SceneSource};
use super::logic::{
    brute_force, members, program_text, question_text, value_of, CountComparison, Form,
    GroundTruth, Kind, ObjSet, Style,
};
use super::scenegen::{gen_scene, MAX_OBJECTS};
use super::HarnessError;
use crate::exec::Task;
use crate::grounding::vocab::{self, AttributeKind};
use crate::grounding::{Scene, SceneObject};

const MAX_TRIES: usize = 100;
const KINDS: [Kind; 4] = [Kind::Size, Kind::Color, Kind::Material, Kind::Shape];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Exist,
    Count,
    CompareNumber,
    QueryAttribute,
    CompareAttribute,
    Ref,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Exist,
        Category::Count,
        Category::CompareNumber,
        Category::QueryAttribute,
        Category::CompareAttribute,
        Category::Ref,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Exist => "exist",
            Category::Count => "count",
            Category::CompareNumber => "compare_number",
            Category::QueryAttribute => "query_attribute",
            Category::CompareAttribute => "compare_attribute",
            Category::Ref => "ref",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Category::Ref => Task::Reg,
            _ => Task::Vqa,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub category: Category,
    pub logical_form: Form,
    pub question_text: String,
    pub program: String,
    pub ground_truth: GroundTruth,
}

fn attr_value(o: &SceneObject, kind: Kind) -> String {
    value_of(o, kind).unwrap_or_else(|| o.class.clone())
}

/// A conjunction of `k` of the object's attribute values.
fn describe(o: &SceneObject, k: usize, rng: &mut ChaCha8Rng) -> ObjSet {
    let mut kinds = KINDS.to_vec();
    kinds.shuffle(rng);
    let mut chosen: Vec<Kind> = kinds.into_iter().take(k.clamp(1, 4)).collect();
    chosen.sort_by_key(|k| KINDS.iter().position(|x| x == k));
    let values: Vec<String> = chosen.iter().map(|&k| attr_value(o, k)).collect();
    ObjSet::all_of(&values).expect("at least one attribute")
}

/// A random description that is not tied to any object.
fn random_description(rng: &mut ChaCha8Rng) -> ObjSet {
    let k = rng.gen_range(1..=2);
    let mut kinds = KINDS.to_vec();
    kinds.shuffle(rng);
    let values: Vec<&str> = kinds[..k]
        .iter()
        .map(|&kind| *AttributeKind::from(kind).values().choose(rng).unwrap())
        .collect();
    ObjSet::all_of(&values).unwrap()
}

fn matching(set: &ObjSet, scene: &Scene) -> Vec<usize> {
    members(set, scene)
        .map(|m| {
            m.iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .map(|(i, _)| i)
                .collect()
        })
        .unwrap_or_default()
}

fn spatial_relations(scene: &Scene, x: usize, y: usize) -> Vec<&str> {
    scene
        .relations
        .iter()
        .filter(|r| r.0 == x && r.2 == y && vocab::SPATIAL.contains(&r.1.as_str()))
        .map(|r| r.1.as_str())
        .collect()
}

/// A description matching exactly object `id`, possibly through a spatial
/// relation to another uniquely described object.
fn unique_description(
    scene: &Scene,
    id: usize,
    rng: &mut ChaCha8Rng,
    depth: usize,
) -> Option<ObjSet> {
    let o = &scene.objects[id];
    let relational_first = depth > 0 && rng.gen_bool(0.4);
    let plain = |rng: &mut ChaCha8Rng| {
        for k in 1..=4 {
            for _ in 0..6 {
                let d = describe(o, k, rng);
                if matching(&d, scene) == [id] {
                    return Some(d);
                }
            }
        }
        None
    };
    if !relational_first {
        if let Some(d) = plain(rng) {
            return Some(d);
        }
    }
    if depth > 0 && scene.len() > 1 {
        for _ in 0..12 {
            let y = rng.gen_range(0..scene.len());
            if y == id {
                continue;
            }
            let rels = spatial_relations(scene, id, y);
            let Some(rel) = rels.choose(rng) else {
                continue;
            };
            let Some(anchor) = unique_description(scene, y, rng, depth - 1) else {
                continue;
            };
            let k = rng.gen_range(1..=2);
            let d = describe(o, k, rng).related(rel, anchor);
            if matching(&d, scene) == [id] {
                return Some(d);
            }
        }
    }
    if relational_first {
        plain(rng)
    } else {
        None
    }
}

/// A description of a random object related to a description of another.
fn relational_description(scene: &Scene, rng: &mut ChaCha8Rng, chain: usize) -> Option<ObjSet> {
    let x = rng.gen_range(0..scene.len());
    relational_description_from(scene, x, rng, chain)
}

fn relational_description_from(
    scene: &Scene,
    x: usize,
    rng: &mut ChaCha8Rng,
    chain: usize,
) -> Option<ObjSet> {
    let y = rng.gen_range(0..scene.len());
    if y == x {
        return None;
    }
    let rel = *spatial_relations(scene, x, y).choose(rng)?;
    let anchor = if chain > 1 {
        relational_description_from(scene, y, rng, chain - 1)?
    } else {
        let k = rng.gen_range(1..=2);
        describe(&scene.objects[y], k, rng)
    };
    let k = rng.gen_range(1..=2);
    Some(describe(&scene.objects[x], k, rng).related(rel, anchor))
}

/// Swaps one attribute of a description for another value of the same kind,
/// which usually produces a set that is empty in the scene.
fn perturb(set: &ObjSet, rng: &mut ChaCha8Rng) -> ObjSet {
    match set {
        ObjSet::Attr(a) => {
            let values: &[&str] = match AttributeKind::of_value(a) {
                Some(kind) => kind.values(),
                None => vocab::SHAPES,
            };
            let others: Vec<&&str> = values.iter().filter(|v| **v != a.as_str()).collect();
            ObjSet::attr(others.choose(rng).unwrap())
        }
        ObjSet::And(l, r) => {
            if rng.gen_bool(0.5) {
                ObjSet::And(Box::new(perturb(l, rng)), r.clone())
            } else {
                ObjSet::And(l.clone(), Box::new(perturb(r, rng)))
            }
        }
        ObjSet::Not(s) => ObjSet::Not(Box::new(perturb(s, rng))),
        ObjSet::Related { relation, anchor } => ObjSet::Related {
            relation: relation.clone(),
            anchor: Box::new(perturb(anchor, rng)),
        },
    }
}

fn candidate(
    category: Category,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
    want_yes: bool,
) -> Option<Form> {
    let n = scene.len();
    match category {
        Category::Exist => {
            let set = match rng.gen_range(0..3) {
                0 => describe(
                    &scene.objects[rng.gen_range(0..n)],
                    rng.gen_range(1..=3),
                    rng,
                ),
                1 => relational_description(scene, rng, 1)?,
                _ => relational_description(scene, rng, 2)?,
            };
            let set = if want_yes { set } else { perturb(&set, rng) };
            Some(Form::Exists(set))
        }
        Category::Count => {
            let set = match rng.gen_range(0..5) {
                0 => random_description(rng),
                1 => relational_description(scene, rng, 1)?,
                2 => describe(&scene.objects[rng.gen_range(0..n)], 1, rng)
                    .and(ObjSet::Not(Box::new(random_description(rng)))),
                _ => describe(
                    &scene.objects[rng.gen_range(0..n)],
                    rng.gen_range(1..=2),
                    rng,
                ),
            };
            Some(Form::Count(set))
        }
        Category::CompareNumber => {
            let comparison = *[
                CountComparison::More,
                CountComparison::Fewer,
                CountComparison::Equal,
            ]
            .choose(rng)
            .unwrap();
            let lhs = random_description(rng);
            let rhs = random_description(rng);
            if lhs == rhs {
                return None;
            }
            Some(Form::CompareCount {
                comparison,
                lhs,
                rhs,
            })
        }
        Category::QueryAttribute => {
            let id = rng.gen_range(0..n);
            let target = unique_description(scene, id, rng, 1)?;
            let mentioned = mentioned_kinds(&target);
            let kinds: Vec<Kind> = KINDS
                .into_iter()
                .filter(|k| !mentioned.contains(k))
                .collect();
            let kind = *kinds.choose(rng).or_else(|| KINDS.choose(rng))?;
            Some(Form::QueryAttribute { target, kind })
        }
        Category::CompareAttribute => {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                return None;
            }
            let kind = *KINDS.choose(rng).unwrap();
            let lhs = unique_description(scene, a, rng, 1)?;
            let rhs = unique_description(scene, b, rng, 1)?;
            Some(Form::SameAttribute { lhs, rhs, kind })
        }
        Category::Ref => {
            let id = rng.gen_range(0..n);
            Some(Form::Refer(unique_description(scene, id, rng, 2)?))
        }
    }
}

/// Kinds named directly (not through an anchor) by a description.
fn mentioned_kinds(set: &ObjSet) -> Vec<Kind> {
    match set {
        ObjSet::Attr(a) => match AttributeKind::of_value(a) {
            Some(k) => vec![k.into()],
            None => vec![Kind::Shape],
        },
        ObjSet::And(l, r) => {
            let mut v = mentioned_kinds(l);
            v.extend(mentioned_kinds(r));
            v
        }
        _ => Vec::new(),
    }
}

fn count_is_positive(form: &Form, scene: &Scene) -> bool {
    let sets: Vec<&ObjSet> = match form {
        Form::ForAll { restrict, .. } => vec![restrict],
        _ => return true,
    };
    sets.iter().all(|s| !matching(s, scene).is_empty())
}

/// Samples a question of `category` for `scene`, deterministically from
/// `seed`. Yes/no categories aim for an even split of answers.
pub fn gen_question(
    category: Category,
    scene: &Scene,
    seed: u64,
) -> Result<QuestionSpec, HarnessError> {
    if scene.is_empty() {
        return Err(HarnessError::Unsatisfiable { category, tries: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want_yes = rng.gen_bool(0.5);
    let style = if rng.gen_bool(0.5) {
        Style::Algebraic
    } else {
        Style::Imperative
    };
    for _ in 0..MAX_TRIES {
        let form = if category == Category::Exist && rng.gen_bool(0.25) {
            // Universal questions share the yes/no bucket of existence questions.
            let restrict = describe(
                &scene.objects[rng.gen_range(0..scene.len())],
                rng.gen_range(1..=2),
                &mut rng,
            );
            let mut kinds = KINDS.to_vec();
            kinds.retain(|k| !mentioned_kinds(&restrict).contains(k));
            let Some(kind) = kinds.choose(&mut rng) else {
                continue;
            };
            let value = AttributeKind::from(*kind)
                .values()
                .choose(&mut rng)
                .unwrap();
            Form::ForAll {
                restrict,
                predicate: ObjSet::attr(value),
            }
        } else {
            match candidate(category, scene, &mut rng, want_yes) {
                Some(f) => f,
                None => continue,
            }
        };
        if !count_is_positive(&form, scene) {
            continue;
        }
        let Ok(ground_truth) = brute_force(&form, scene) else {
            continue;
        };
        if let GroundTruth::YesNo(b) = ground_truth {
            if b != want_yes {
                continue;
            }
        }
        let program = program_text(&form, style);
        return Ok(QuestionSpec {
            category,
            question_text: question_text(&form),
            program,
            ground_truth,
            logical_form: form,
        });
    }
    Err(HarnessError::Unsatisfiable {
        category,
        tries: MAX_TRIES,
    })
}

/// A stand-in for an end-to-end model's answer: correct with probability
/// `accuracy`, otherwise a plausible wrong answer.
pub fn simulate_backbone(
    truth: &GroundTruth,
    scene: &Scene,
    accuracy: f64,
    rng: &mut ChaCha8Rng,
) -> GroundTruth {
    if rng.gen_bool(accuracy.clamp(0.0, 1.0)) {
        return truth.clone();
    }
    match truth {
        GroundTruth::YesNo(b) => GroundTruth::YesNo(!b),
        GroundTruth::Count(c) => GroundTruth::Count(if *c == 0 || rng.gen_bool(0.5) {
            c + 1
        } else {
            c - 1
        }),
        GroundTruth::Text(t) => {
            let values = AttributeKind::of_value(t).map_or(vocab::SHAPES, |k| k.values());
            let others: Vec<&&str> = values.iter().filter(|v| **v != t.as_str()).collect();
            GroundTruth::Text(
                others
                    .choose(rng)
                    .map_or_else(|| t.clone(), |v| v.to_string()),
            )
        }
        GroundTruth::Object { id, .. } => {
            if scene.len() < 2 {
                return truth.clone();
            }
            let mut other = rng.gen_range(0..scene.len() - 1);
            if other >= *id {
                other += 1;
            }
            GroundTruth::Object {
                id: other,
                bbox: scene.objects[other].bbox,
            }
        }
    }
}

const SCENE_REDRAWS: usize = 10;

fn scene_questions(
    scene: &Scene,
    per_category: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QuestionSpec>, HarnessError> {
    let mut out = Vec::with_capacity(per_category * Category::ALL.len());
    for category in Category::ALL {
        for _ in 0..per_category {
            out.push(gen_question(category, scene, rng.gen())?);
        }
    }
    Ok(out)
}

/// Generates `n_scenes` scenes with `per_category` questions of every
/// category each. A scene that cannot host every category (for instance,
/// one whose objects cannot be told apart) is redrawn a few times before
/// the scene index is reported as a failure.
pub fn gen_corpus(
    seed: u64,
    n_scenes: usize,
    per_category: usize,
    backbone_accuracy: Option<f64>,
) -> (Vec<CorpusRecord>, Vec<(usize, HarnessError)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for index in 0..n_scenes {
        let mut last_err = None;
        for _ in 0..SCENE_REDRAWS {
            let scene_seed: u64 = rng.gen();
            let n = rng.gen_range(3..=MAX_OBJECTS);
            let generated = gen_scene(scene_seed, n)
                .and_then(|scene| Ok((scene_questions(&scene, per_category, &mut rng)?, scene)));
            match generated {
                Ok((questions, scene)) => {
                    for q in questions {
                        let backbone_answer = backbone_accuracy
                            .map(|acc| simulate_backbone(&q.ground_truth, &scene, acc, &mut rng));
                        records.push(CorpusRecord {
                            scene: SceneSource::Inline(scene.clone()),
                            category: q.category,
                            question_text: q.question_text,
                            program: q.program,
                            ground_truth: q.ground_truth,
                            logical_form: Some(q.logical_form),
                            backbone_answer,
                        });
                    }
                    last_err = None;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let Some(e) = last_err {
            failures.push((index, e));
        }
    }
    (records, failures)
}
