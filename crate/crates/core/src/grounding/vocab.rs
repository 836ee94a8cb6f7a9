//! Attribute vocabulary of the synthetic scenes and the canonical
//! predicate names understood by the local grounders.

use super::SceneObject;

pub const COLORS: &[&str] = &[
    "gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow",
];
pub const SHAPES: &[&str] = &["cube", "sphere", "cylinder"];
pub const SIZES: &[&str] = &["small", "large"];
pub const MATERIALS: &[&str] = &["metal", "rubber"];

/// Spatial relation predicates; `(x, "left", y)` reads "x is left of y".
pub const SPATIAL: &[&str] = &["left", "right", "front", "behind"];

/// Question templates sent to a perception backend for each arity. The
/// local grounders also accept these verbatim.
pub const OBJECT_TEMPLATE: &str = "Is the object in the red bounding box {attribute}?";
pub const PAIR_TEMPLATE: &str =
    "Is the object in the red bounding box {relation} the object in the green bounding box?";
pub const ATTRIBUTE_QUERY_TEMPLATE: &str = "What {kind} is the object in the red bounding box?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Color,
    Shape,
    Size,
    Material,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 4] = [
        AttributeKind::Color,
        AttributeKind::Shape,
        AttributeKind::Size,
        AttributeKind::Material,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Color => "color",
            AttributeKind::Shape => "shape",
            AttributeKind::Size => "size",
            AttributeKind::Material => "material",
        }
    }

    pub fn values(self) -> &'static [&'static str] {
        match self {
            AttributeKind::Color => COLORS,
            AttributeKind::Shape => SHAPES,
            AttributeKind::Size => SIZES,
            AttributeKind::Material => MATERIALS,
        }
    }

    pub fn of_value(value: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.values().contains(&value))
    }
}

pub fn is_attribute_value(pred: &str) -> bool {
    AttributeKind::of_value(pred).is_some()
}

/// `"same color"` and friends.
pub fn analogical_kind(pred: &str) -> Option<AttributeKind> {
    let rest = pred.strip_prefix("same ")?;
    AttributeKind::ALL.into_iter().find(|k| k.name() == rest)
}

/// An object's value for `kind`. Shape falls back to the class.
pub fn attribute_of(object: &SceneObject, kind: AttributeKind) -> Option<String> {
    let from_attrs = object
        .attributes
        .iter()
        .find(|a| kind.values().contains(&a.to_ascii_lowercase().as_str()))
        .map(|a| a.to_ascii_lowercase());
    match kind {
        AttributeKind::Shape => from_attrs
            .or_else(|| (!object.class.is_empty()).then(|| object.class.to_ascii_lowercase())),
        _ => from_attrs,
    }
}

/// Maps relation phrasings to canonical predicate names.
pub fn canonical_relation(phrase: &str) -> Option<String> {
    let p = phrase.trim();
    let p = p.strip_prefix("to the ").unwrap_or(p);
    let p = p.strip_prefix("the ").unwrap_or(p);
    let p = p.strip_prefix("in ").unwrap_or(p);
    let p = p.strip_suffix(" of").unwrap_or(p);
    let p = p.strip_suffix(" as").unwrap_or(p);
    let p = match p {
        "left" | "right" | "front" | "behind" => p,
        "has same color" | "same color" => "same color",
        "has same shape" | "same shape" => "same shape",
        "has same size" | "same size" => "same size",
        "has same material" | "same material" => "same material",
        _ => return None,
    };
    Some(p.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_phrasings() {
        assert_eq!(canonical_relation("left of").as_deref(), Some("left"));
        assert_eq!(
            canonical_relation("to the right of").as_deref(),
            Some("right")
        );
        assert_eq!(canonical_relation("behind").as_deref(), Some("behind"));
        assert_eq!(
            canonical_relation("same material as").as_deref(),
            Some("same material")
        );
        assert_eq!(canonical_relation("red"), None);
    }

    #[test]
    fn attribute_kinds() {
        assert_eq!(AttributeKind::of_value("cyan"), Some(AttributeKind::Color));
        assert_eq!(
            AttributeKind::of_value("rubber"),
            Some(AttributeKind::Material)
        );
        assert_eq!(analogical_kind("same size"), Some(AttributeKind::Size));
        assert_eq!(analogical_kind("same"), None);
    }
}
