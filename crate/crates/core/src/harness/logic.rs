//! Logical forms of harness questions, their crisp brute-force evaluation,
//! and their rendering as English questions and as programs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::grounding::vocab::{self, AttributeKind};
use crate::grounding::{BBox, Scene, SceneObject};

/// A set of objects described by attributes and relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjSet {
    /// Objects having an attribute value or shape, e.g. `"red"`, `"cube"`.
    Attr(String),
    And(Box<ObjSet>, Box<ObjSet>),
    Not(Box<ObjSet>),
    /// Objects `x` with `(x, relation, y)` for some `y` in the anchor set.
    Related {
        relation: String,
        anchor: Box<ObjSet>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountComparison {
    More,
    Fewer,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Exists(ObjSet),
    ForAll {
        restrict: ObjSet,
        predicate: ObjSet,
    },
    Count(ObjSet),
    CompareCount {
        comparison: CountComparison,
        lhs: ObjSet,
        rhs: ObjSet,
    },
    /// The value of `kind` for the unique object in `target`.
    QueryAttribute {
        target: ObjSet,
        kind: Kind,
    },
    /// Whether the unique objects of `lhs` and `rhs` share `kind`.
    SameAttribute {
        lhs: ObjSet,
        rhs: ObjSet,
        kind: Kind,
    },
    /// The unique object in the set.
    Refer(ObjSet),
}

/// Serializable mirror of [`AttributeKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Color,
    Shape,
    Size,
    Material,
}

impl From<Kind> for AttributeKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Color => AttributeKind::Color,
            Kind::Shape => AttributeKind::Shape,
            Kind::Size => AttributeKind::Size,
            Kind::Material => AttributeKind::Material,
        }
    }
}

impl From<AttributeKind> for Kind {
    fn from(k: AttributeKind) -> Self {
        match k {
            AttributeKind::Color => Kind::Color,
            AttributeKind::Shape => Kind::Shape,
            AttributeKind::Size => Kind::Size,
            AttributeKind::Material => Kind::Material,
        }
    }
}

impl Kind {
    pub fn name(self) -> &'static str {
        AttributeKind::from(self).name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    YesNo(bool),
    Count(i64),
    Text(String),
    Object {
        id: usize,
        #[serde(rename = "box")]
        bbox: BBox,
    },
}

impl ObjSet {
    pub fn attr(a: &str) -> Self {
        ObjSet::Attr(a.to_string())
    }

    /// Conjunction of the given attributes, `None` if empty.
    pub fn all_of<S: AsRef<str>>(attrs: &[S]) -> Option<Self> {
        let mut it = attrs.iter().map(|a| ObjSet::attr(a.as_ref()));
        let first = it.next()?;
        Some(it.fold(first, |acc, a| ObjSet::And(Box::new(acc), Box::new(a))))
    }

    pub fn and(self, other: ObjSet) -> Self {
        ObjSet::And(Box::new(self), Box::new(other))
    }

    pub fn related(self, relation: &str, anchor: ObjSet) -> Self {
        self.and(ObjSet::Related {
            relation: relation.to_string(),
            anchor: Box::new(anchor),
        })
    }

    fn conjuncts(&self) -> Vec<&ObjSet> {
        match self {
            ObjSet::And(l, r) => {
                let mut out = l.conjuncts();
                out.extend(r.conjuncts());
                out
            }
            other => vec![other],
        }
    }
}

// ---------------------------------------------------------------------------
// Brute-force evaluation

fn has_attr(o: &SceneObject, attr: &str) -> bool {
    o.class.eq_ignore_ascii_case(attr) || o.attributes.iter().any(|a| a.eq_ignore_ascii_case(attr))
}

/// The object's value for `kind`; shape is the class.
pub fn value_of(o: &SceneObject, kind: Kind) -> Option<String> {
    if kind == Kind::Shape {
        return Some(o.class.to_ascii_lowercase()).filter(|c| !c.is_empty());
    }
    let values = AttributeKind::from(kind).values();
    o.attributes
        .iter()
        .map(|a| a.to_ascii_lowercase())
        .find(|a| values.contains(&a.as_str()))
}

fn relation_holds(scene: &Scene, x: usize, relation: &str, y: usize) -> Result<bool, HarnessError> {
    if let Some(kind) = relation.strip_prefix("same ") {
        let kind = match kind {
            "color" => Kind::Color,
            "shape" => Kind::Shape,
            "size" => Kind::Size,
            "material" => Kind::Material,
            _ => return Err(HarnessError::UnsupportedPredicate(relation.to_string())),
        };
        let (a, b) = (&scene.objects[x], &scene.objects[y]);
        return Ok(x != y && value_of(a, kind).is_some() && value_of(a, kind) == value_of(b, kind));
    }
    if !vocab::SPATIAL.contains(&relation) {
        return Err(HarnessError::UnsupportedPredicate(relation.to_string()));
    }
    Ok(scene
        .relations
        .iter()
        .any(|r| r.0 == x && r.2 == y && r.1.eq_ignore_ascii_case(relation)))
}

/// Membership of every object in `set`.
pub fn members(set: &ObjSet, scene: &Scene) -> Result<Vec<bool>, HarnessError> {
    let n = scene.len();
    Ok(match set {
        ObjSet::Attr(a) => {
            let known = vocab::is_attribute_value(a) || vocab::SHAPES.contains(&a.as_str());
            if !known {
                return Err(HarnessError::UnsupportedPredicate(a.clone()));
            }
            scene.objects.iter().map(|o| has_attr(o, a)).collect()
        }
        ObjSet::And(l, r) => {
            let (l, r) = (members(l, scene)?, members(r, scene)?);
            l.iter().zip(&r).map(|(a, b)| *a && *b).collect()
        }
        ObjSet::Not(s) => members(s, scene)?.into_iter().map(|b| !b).collect(),
        ObjSet::Related { relation, anchor } => {
            let anchors = members(anchor, scene)?;
            let mut out = vec![false; n];
            for (x, slot) in out.iter_mut().enumerate() {
                for (y, &is_anchor) in anchors.iter().enumerate() {
                    if is_anchor && relation_holds(scene, x, relation, y)? {
                        *slot = true;
                        break;
                    }
                }
            }
            out
        }
    })
}

fn unique(set: &ObjSet, scene: &Scene) -> Result<usize, HarnessError> {
    let m = members(set, scene)?;
    let ids: Vec<usize> = m
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| i)
        .collect();
    match ids.as_slice() {
        [id] => Ok(*id),
        _ => Err(HarnessError::NotUnique(ids.len())),
    }
}

fn count(set: &ObjSet, scene: &Scene) -> Result<i64, HarnessError> {
    Ok(members(set, scene)?.iter().filter(|b| **b).count() as i64)
}

/// Exhaustive crisp evaluation of `form` over `scene`.
pub fn brute_force(form: &Form, scene: &Scene) -> Result<GroundTruth, HarnessError> {
    Ok(match form {
        Form::Exists(s) => GroundTruth::YesNo(members(s, scene)?.contains(&true)),
        Form::ForAll {
            restrict,
            predicate,
        } => {
            let r = members(restrict, scene)?;
            let p = members(predicate, scene)?;
            GroundTruth::YesNo(r.iter().zip(&p).all(|(r, p)| !r || *p))
        }
        Form::Count(s) => GroundTruth::Count(count(s, scene)?),
        Form::CompareCount {
            comparison,
            lhs,
            rhs,
        } => {
            let (a, b) = (count(lhs, scene)?, count(rhs, scene)?);
            GroundTruth::YesNo(match comparison {
                CountComparison::More => a > b,
                CountComparison::Fewer => a < b,
                CountComparison::Equal => a == b,
            })
        }
        Form::QueryAttribute { target, kind } => {
            let id = unique(target, scene)?;
            GroundTruth::Text(
                value_of(&scene.objects[id], *kind)
                    .ok_or_else(|| HarnessError::UnsupportedPredicate(kind.name().into()))?,
            )
        }
        Form::SameAttribute { lhs, rhs, kind } => {
            let (a, b) = (unique(lhs, scene)?, unique(rhs, scene)?);
            let (va, vb) = (
                value_of(&scene.objects[a], *kind),
                value_of(&scene.objects[b], *kind),
            );
            GroundTruth::YesNo(va.is_some() && va == vb)
        }
        Form::Refer(s) => {
            let id = unique(s, scene)?;
            GroundTruth::Object {
                id,
                bbox: scene.objects[id].bbox,
            }
        }
    })
}

// ---------------------------------------------------------------------------
// English

fn relation_phrase(relation: &str) -> String {
    match relation {
        "left" => "left of".into(),
        "right" => "right of".into(),
        "front" => "in front of".into(),
        "behind" => "behind".into(),
        other => match other.strip_prefix("same ") {
            Some(kind) => format!("with the same {kind} as"),
            None => other.into(),
        },
    }
}

fn plural_noun(shape: &str) -> String {
    format!("{shape}s")
}

/// English noun phrase for `set`, e.g. "large red cube behind the sphere".
pub fn noun_phrase(set: &ObjSet, plural: bool) -> String {
    let conjuncts = set.conjuncts();
    let mut adjectives: Vec<(usize, &str)> = Vec::new();
    let mut shape = None;
    let mut trailing = Vec::new();
    for c in conjuncts {
        match c {
            ObjSet::Attr(a) if vocab::SHAPES.contains(&a.as_str()) => shape = Some(a.as_str()),
            ObjSet::Attr(a) => {
                let order = match AttributeKind::of_value(a) {
                    Some(AttributeKind::Size) => 0,
                    Some(AttributeKind::Color) => 1,
                    Some(AttributeKind::Material) => 2,
                    _ => 3,
                };
                adjectives.push((order, a.as_str()));
            }
            ObjSet::Not(inner) => {
                let verb = if plural { "are" } else { "is" };
                trailing.push(format!("that {verb} not {}", noun_phrase_bare(inner)));
            }
            ObjSet::Related { relation, anchor } => {
                trailing.push(format!(
                    "{} the {}",
                    relation_phrase(relation),
                    noun_phrase(anchor, false)
                ));
            }
            ObjSet::And(..) => unreachable!("conjuncts are flattened"),
        }
    }
    adjectives.sort_by_key(|(k, _)| *k);
    let mut out = String::new();
    for (_, a) in adjectives {
        let _ = write!(out, "{a} ");
    }
    let noun = shape.unwrap_or("object");
    out.push_str(&if plural {
        plural_noun(noun)
    } else {
        noun.to_string()
    });
    for t in trailing {
        let _ = write!(out, " {t}");
    }
    out
}

fn noun_phrase_bare(set: &ObjSet) -> String {
    match set {
        ObjSet::Attr(a) if !vocab::SHAPES.contains(&a.as_str()) => a.clone(),
        other => format!("a {}", noun_phrase(other, false)),
    }
}

fn article(phrase: &str) -> &'static str {
    if phrase.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

/// An English rendering of `form`.
pub fn question_text(form: &Form) -> String {
    match form {
        Form::Exists(s) => {
            let np = noun_phrase(s, false);
            format!("Is there {} {np}?", article(&np))
        }
        Form::ForAll {
            restrict,
            predicate,
        } => {
            let pred = match predicate {
                ObjSet::Attr(a) if vocab::SHAPES.contains(&a.as_str()) => plural_noun(a),
                ObjSet::Attr(a) => a.clone(),
                other => noun_phrase(other, true),
            };
            format!("Are all {} {pred}?", noun_phrase(restrict, true))
        }
        Form::Count(s) => format!("How many {} are there?", noun_phrase(s, true)),
        Form::CompareCount {
            comparison,
            lhs,
            rhs,
        } => {
            let (a, b) = (noun_phrase(lhs, true), noun_phrase(rhs, true));
            match comparison {
                CountComparison::More => format!("Are there more {a} than {b}?"),
                CountComparison::Fewer => format!("Are there fewer {a} than {b}?"),
                CountComparison::Equal => format!("Are there the same number of {a} and {b}?"),
            }
        }
        Form::QueryAttribute { target, kind } => {
            format!(
                "What {} is the {}?",
                kind.name(),
                noun_phrase(target, false)
            )
        }
        Form::SameAttribute { lhs, rhs, kind } => format!(
            "Does the {} have the same {} as the {}?",
            noun_phrase(lhs, false),
            kind.name(),
            noun_phrase(rhs, false)
        ),
        Form::Refer(s) => format!("the {}", noun_phrase(s, false)),
    }
}

// ---------------------------------------------------------------------------
// Programs

/// How a form is spelled as a program when several spellings exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Style {
    /// Soft operators only.
    #[default]
    Algebraic,
    /// Loops and free-text queries where they apply.
    Imperative,
}

struct Builder {
    lines: Vec<String>,
    anchors: usize,
}

fn score(pred: &str, arity: u8) -> String {
    format!("score({pred:?}, {arity})")
}

impl Builder {
    fn new() -> Self {
        Builder {
            lines: Vec::new(),
            anchors: 0,
        }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.anchors += 1;
        if self.anchors == 1 {
            base.to_string()
        } else {
            format!("{base}{}", self.anchors)
        }
    }

    /// Expression for `set`; anchors of relations are bound to names first.
    fn expr(&mut self, set: &ObjSet) -> String {
        let parts: Vec<String> = set
            .conjuncts()
            .into_iter()
            .map(|c| match c {
                ObjSet::Attr(a) => score(a, 1),
                ObjSet::Not(inner) => format!("(not {})", self.atom(inner)),
                ObjSet::Related { relation, anchor } => {
                    let a = self.expr(anchor);
                    let name = self.fresh("anchor");
                    self.lines.push(format!("{name} = {a}"));
                    format!("({name} & {})", score(relation, 2))
                }
                ObjSet::And(..) => unreachable!("conjuncts are flattened"),
            })
            .collect();
        parts.join(" & ")
    }

    /// `expr` wrapped in parentheses unless it is a single call.
    fn atom(&mut self, set: &ObjSet) -> String {
        let e = self.expr(set);
        if matches!(set, ObjSet::Attr(_)) {
            e
        } else {
            format!("({e})")
        }
    }

    fn bind(&mut self, name: &str, set: &ObjSet) {
        let e = self.expr(set);
        self.lines.push(format!("{name} = {e}"));
    }

    fn push(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    fn finish(self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

fn query_question(kind: Kind) -> String {
    vocab::ATTRIBUTE_QUERY_TEMPLATE.replace("{kind}", kind.name())
}

/// A program computing `form`.
pub fn program_text(form: &Form, style: Style) -> String {
    let mut b = Builder::new();
    match form {
        Form::Exists(s) => {
            b.bind("target", s);
            b.push("return target.exists()");
        }
        Form::ForAll {
            restrict,
            predicate,
        } => {
            let r = b.atom(restrict);
            let p = b.expr(predicate);
            b.push(format!("return {r}.implies({p}).forall()"));
        }
        Form::Count(s) => {
            b.bind("target", s);
            b.push("return target.count()");
        }
        Form::CompareCount {
            comparison,
            lhs,
            rhs,
        } => {
            let l = b.atom(lhs);
            b.push(format!("lhs_count = {l}.count()"));
            let r = b.atom(rhs);
            b.push(format!("rhs_count = {r}.count()"));
            let op = match comparison {
                CountComparison::More => ">",
                CountComparison::Fewer => "<",
                CountComparison::Equal => "==",
            };
            b.push(format!("return lhs_count {op} rhs_count"));
        }
        Form::QueryAttribute { target, kind } => {
            b.bind("target", target);
            b.push("for i, s in target:");
            b.push("  if s:");
            b.push(format!("    return query({:?}, i)", query_question(*kind)));
            b.push("return \"unknown\"");
        }
        Form::SameAttribute { lhs, rhs, kind } => match style {
            Style::Algebraic => {
                b.bind("first", lhs);
                b.bind("second", rhs);
                let rel = format!("same {}", kind.name());
                b.push(format!(
                    "return ((second & {}) & first).exists()",
                    score(&rel, 2)
                ));
            }
            Style::Imperative => {
                b.bind("first", lhs);
                b.bind("second", rhs);
                let q = query_question(*kind);
                b.push("for i, s in first:");
                b.push("  if s:");
                b.push("    for j, t in second:");
                b.push("      if t:");
                b.push(format!("        return query({q:?}, i) == query({q:?}, j)"));
                b.push("return False");
            }
        },
        Form::Refer(s) => {
            b.bind("target", s);
            b.push("return target");
        }
    }
    b.finish()
}
