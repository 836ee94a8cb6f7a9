//! Requests, responses and the JSON wire format shared by every grounder.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{BBox, GroundingError};

/// Number of highlighted objects a predicate is asked about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Arity {
    /// Whole-image question, scalar answer.
    Image,
    /// Per-object question, length-N answer.
    Object,
    /// Ordered-pair question, N x N answer.
    Pair,
}

impl TryFrom<u8> for Arity {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            0 => Ok(Arity::Image),
            1 => Ok(Arity::Object),
            2 => Ok(Arity::Pair),
            other => Err(format!("num_objects must be 0, 1 or 2, got {other}")),
        }
    }
}

impl From<Arity> for u8 {
    fn from(a: Arity) -> u8 {
        match a {
            Arity::Image => 0,
            Arity::Object => 1,
            Arity::Pair => 2,
        }
    }
}

impl Arity {
    pub fn from_i64(n: i64) -> Option<Self> {
        u8::try_from(n).ok().and_then(|n| Arity::try_from(n).ok())
    }

    /// Number of answer elements for a scene of `n` objects.
    pub fn answer_len(self, n: usize) -> usize {
        match self {
            Arity::Image => 1,
            Arity::Object => n,
            Arity::Pair => n * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Score,
    Query,
    Detect,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    Objects(Vec<usize>),
    Pairs(Vec<[usize; 2]>),
}

/// Box colors of the visual prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMeta {
    pub primary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<String>,
}

impl PromptMeta {
    pub fn for_arity(arity: Arity) -> Option<Self> {
        match arity {
            Arity::Image => None,
            Arity::Object => Some(PromptMeta {
                primary: "red".into(),
                secondary: None,
            }),
            Arity::Pair => Some(PromptMeta {
                primary: "red".into(),
                secondary: Some("green".into()),
            }),
        }
    }
}

/// One grounding call. This is also the request body on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundingRequest {
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_objects: Option<Arity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Targets>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_meta: Option<PromptMeta>,
}

impl GroundingRequest {
    /// A `score` request over every object (arity 1) or every ordered pair
    /// of distinct objects (arity 2) of an `n`-object scene.
    pub fn score(question: impl Into<String>, arity: Arity, n: usize) -> Self {
        let targets = match arity {
            Arity::Image => None,
            Arity::Object => Some(Targets::Objects((0..n).collect())),
            Arity::Pair => Some(Targets::Pairs(
                (0..n)
                    .flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| [x, y]))
                    .collect(),
            )),
        };
        GroundingRequest {
            kind: RequestKind::Score,
            image_ref: None,
            question: Some(question.into()),
            num_objects: Some(arity),
            targets,
            names: None,
            prompt_meta: PromptMeta::for_arity(arity),
        }
    }

    /// A free-text `query`, optionally about highlighted objects.
    pub fn query(question: impl Into<String>, objects: &[usize]) -> Self {
        let arity = match objects.len() {
            0 => Arity::Image,
            1 => Arity::Object,
            _ => Arity::Pair,
        };
        GroundingRequest {
            kind: RequestKind::Query,
            image_ref: None,
            question: Some(question.into()),
            num_objects: Some(arity),
            targets: (!objects.is_empty()).then(|| Targets::Objects(objects.to_vec())),
            names: None,
            prompt_meta: PromptMeta::for_arity(arity),
        }
    }

    pub fn detect(names: Vec<String>) -> Self {
        GroundingRequest {
            kind: RequestKind::Detect,
            image_ref: None,
            question: None,
            num_objects: None,
            targets: None,
            names: Some(names),
            prompt_meta: None,
        }
    }

    pub fn question_text(&self) -> &str {
        self.question.as_deref().unwrap_or("")
    }

    pub fn arity(&self) -> Result<Arity, GroundingError> {
        self.num_objects
            .ok_or_else(|| GroundingError::InvalidRequest("missing num_objects".into()))
    }

    /// Objects named by a query request.
    pub fn query_objects(&self) -> Vec<usize> {
        match &self.targets {
            Some(Targets::Objects(ids)) => ids.clone(),
            Some(Targets::Pairs(pairs)) => pairs.iter().flatten().copied().collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundingResponse {
    /// Row-major scores with as many elements as the arity requires.
    Scores(Vec<f64>),
    /// `(logit_yes, logit_no)` per element.
    YesNoLogits(Vec<(f64, f64)>),
    Text(String),
    Boxes(Vec<BBox>),
}

/// `e^ly / (e^ly + e^ln)`, computed without overflow.
pub fn normalize_logits(ly: f64, ln: f64) -> Result<f64, GroundingError> {
    if !ly.is_finite() || !ln.is_finite() {
        return Err(GroundingError::NonFiniteLogit);
    }
    let m = ly.max(ln);
    let ey = (ly - m).exp();
    let en = (ln - m).exp();
    Ok(ey / (ey + en))
}

impl GroundingResponse {
    /// Flat probabilities for a `score` call of `arity` over `n` objects.
    /// Logits are normalized; lengths and ranges are checked.
    pub fn into_scores(self, arity: Arity, n: usize) -> Result<Vec<f64>, GroundingError> {
        let expected = arity.answer_len(n);
        let scores = match self {
            GroundingResponse::Scores(s) => s,
            GroundingResponse::YesNoLogits(pairs) => pairs
                .into_iter()
                .map(|(ly, ln)| normalize_logits(ly, ln))
                .collect::<Result<_, _>>()?,
            other => {
                return Err(GroundingError::Malformed(format!(
                    "expected scores or logits, got {}",
                    other.kind_name()
                )))
            }
        };
        if scores.len() != expected {
            return Err(GroundingError::Malformed(format!(
                "expected {expected} scores for arity {} over {n} objects, got {}",
                u8::from(arity),
                scores.len()
            )));
        }
        if let Some(&bad) = scores
            .iter()
            .find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s))
        {
            return Err(GroundingError::ScoreOutOfRange(bad));
        }
        Ok(scores)
    }

    pub fn into_text(self) -> Result<String, GroundingError> {
        match self {
            GroundingResponse::Text(t) => Ok(t),
            other => Err(GroundingError::Malformed(format!(
                "expected text, got {}",
                other.kind_name()
            ))),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            GroundingResponse::Scores(_) => "scores",
            GroundingResponse::YesNoLogits(_) => "logits",
            GroundingResponse::Text(_) => "text",
            GroundingResponse::Boxes(_) => "boxes",
        }
    }
}

/// Response body on the wire. Exactly one field is expected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn malformed(msg: impl Into<String>) -> GroundingError {
    GroundingError::Malformed(msg.into())
}

fn number(v: &Json) -> Result<f64, GroundingError> {
    v.as_f64()
        .ok_or_else(|| malformed(format!("expected a number, got {v}")))
}

fn array(v: &Json) -> Result<&Vec<Json>, GroundingError> {
    v.as_array()
        .ok_or_else(|| malformed(format!("expected an array, got {v}")))
}

/// Flattens scores shaped as a number (arity 0), a length-N array
/// (arity 1), or an N x N nested array (arity 2).
fn decode_scores(v: &Json, arity: Arity, n: usize) -> Result<Vec<f64>, GroundingError> {
    match arity {
        Arity::Image => match v {
            Json::Array(items) if items.len() == 1 => Ok(vec![number(&items[0])?]),
            Json::Array(items) => Err(malformed(format!(
                "expected one score for arity 0, got {}",
                items.len()
            ))),
            other => Ok(vec![number(other)?]),
        },
        Arity::Object => {
            let items = array(v)?;
            if items.len() != n {
                return Err(malformed(format!(
                    "expected {n} scores for arity 1, got {}",
                    items.len()
                )));
            }
            items.iter().map(number).collect()
        }
        Arity::Pair => {
            let rows = array(v)?;
            if rows.len() != n {
                return Err(malformed(format!(
                    "expected a {n}x{n} matrix, got {} rows",
                    rows.len()
                )));
            }
            let mut out = Vec::with_capacity(n * n);
            for row in rows {
                let row = array(row)?;
                if row.len() != n {
                    return Err(malformed(format!(
                        "expected a {n}x{n} matrix, got a row of length {}",
                        row.len()
                    )));
                }
                for x in row {
                    out.push(number(x)?);
                }
            }
            Ok(out)
        }
    }
}

/// Logits are a flat list of `[ly, ln]` pairs of length 1, N or N*N.
fn decode_logits(v: &Json, arity: Arity, n: usize) -> Result<Vec<(f64, f64)>, GroundingError> {
    let items = array(v)?;
    let expected = arity.answer_len(n);
    if items.len() != expected {
        return Err(malformed(format!(
            "expected {expected} logit pairs, got {}",
            items.len()
        )));
    }
    items
        .iter()
        .map(|p| {
            let pair = array(p)?;
            if pair.len() != 2 {
                return Err(malformed("logit entries must be [yes, no] pairs"));
            }
            Ok((number(&pair[0])?, number(&pair[1])?))
        })
        .collect()
}

impl WireResponse {
    /// Interprets the body as the answer to `request` over `n` objects.
    pub fn decode(
        &self,
        request: &GroundingRequest,
        n: usize,
    ) -> Result<GroundingResponse, GroundingError> {
        if let Some(e) = &self.error {
            return Err(GroundingError::Remote(e.clone()));
        }
        match request.kind {
            RequestKind::Score => {
                let arity = request.arity()?;
                if let Some(l) = &self.logits {
                    Ok(GroundingResponse::YesNoLogits(decode_logits(l, arity, n)?))
                } else if let Some(s) = &self.scores {
                    Ok(GroundingResponse::Scores(decode_scores(s, arity, n)?))
                } else {
                    Err(malformed(
                        "score response carries neither scores nor logits",
                    ))
                }
            }
            RequestKind::Query => self
                .text
                .clone()
                .map(GroundingResponse::Text)
                .ok_or_else(|| malformed("query response carries no text")),
            RequestKind::Detect => {
                let boxes = self
                    .boxes
                    .as_ref()
                    .ok_or_else(|| malformed("detect response carries no boxes"))?;
                Ok(GroundingResponse::Boxes(
                    boxes.iter().map(|&b| BBox::from(b)).collect(),
                ))
            }
        }
    }

    /// Encodes a response in the wire shape for `arity` over `n` objects.
    pub fn encode(response: &GroundingResponse, arity: Option<Arity>, n: usize) -> Self {
        let mut out = WireResponse::default();
        match response {
            GroundingResponse::Scores(s) => {
                out.scores = Some(match arity {
                    Some(Arity::Image) => Json::from(s[0]),
                    Some(Arity::Pair) => Json::Array(
                        s.chunks(n.max(1))
                            .map(|row| Json::from(row.to_vec()))
                            .collect(),
                    ),
                    _ => Json::from(s.clone()),
                })
            }
            GroundingResponse::YesNoLogits(l) => {
                out.logits = Some(Json::Array(
                    l.iter().map(|&(y, n)| Json::from(vec![y, n])).collect(),
                ))
            }
            GroundingResponse::Text(t) => out.text = Some(t.clone()),
            GroundingResponse::Boxes(b) => {
                out.boxes = Some(b.iter().map(|&b| <[f64; 4]>::from(b)).collect())
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn logits_normalize_stably() {
        assert_eq!(normalize_logits(0.0, 0.0).unwrap(), 0.5);
        assert!((normalize_logits(1.0, 0.0).unwrap() - 0.7310585786300049).abs() < 1e-15);
        let big = normalize_logits(1000.0, 0.0).unwrap();
        assert!((big - 1.0).abs() < 1e-12);
        assert!(normalize_logits(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn score_request_targets() {
        let r = GroundingRequest::score("left", Arity::Pair, 3);
        let Some(Targets::Pairs(p)) = &r.targets else {
            panic!()
        };
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|[x, y]| x != y));
        assert_eq!(
            r.prompt_meta.as_ref().unwrap().secondary.as_deref(),
            Some("green")
        );
        let wire = serde_json::to_value(&r).unwrap();
        assert_eq!(wire["kind"], "score");
        assert_eq!(wire["num_objects"], 2);
        assert_eq!(wire["targets"][0], json!([0, 1]));
    }

    #[test]
    fn decode_rejects_wrong_matrix_shape() {
        let req = GroundingRequest::score("left", Arity::Pair, 3);
        let body: WireResponse =
            serde_json::from_value(json!({"scores": [[0, 1, 0], [1, 0, 0]]})).unwrap();
        assert!(matches!(
            body.decode(&req, 3),
            Err(GroundingError::Malformed(_))
        ));
    }

    #[test]
    fn decode_scalar_and_logits() {
        let req = GroundingRequest::score("indoors", Arity::Image, 3);
        let body: WireResponse = serde_json::from_value(json!({"scores": 0.7})).unwrap();
        assert_eq!(
            body.decode(&req, 3)
                .unwrap()
                .into_scores(Arity::Image, 3)
                .unwrap(),
            vec![0.7]
        );
        let req = GroundingRequest::score("red", Arity::Object, 3);
        let body: WireResponse =
            serde_json::from_value(json!({"logits": [[2, 0], [0, 2], [0, 0]]})).unwrap();
        let s = body
            .decode(&req, 3)
            .unwrap()
            .into_scores(Arity::Object, 3)
            .unwrap();
        assert!((s[0] - 0.8807970779778823).abs() < 1e-12);
        assert!((s[1] - 0.11920292202211755).abs() < 1e-12);
        assert_eq!(s[2], 0.5);
    }

    #[test]
    fn out_of_range_scores_are_rejected() {
        let r = GroundingResponse::Scores(vec![0.2, 1.2]);
        assert!(matches!(
            r.into_scores(Arity::Object, 2),
            Err(GroundingError::ScoreOutOfRange(_))
        ));
    }

    #[test]
    fn encode_decode_pair_matrix() {
        let req = GroundingRequest::score("left", Arity::Pair, 2);
        let resp = GroundingResponse::Scores(vec![0.0, 1.0, 0.0, 0.0]);
        let wire = WireResponse::encode(&resp, Some(Arity::Pair), 2);
        assert_eq!(wire.scores, Some(json!([[0.0, 1.0], [0.0, 0.0]])));
        assert_eq!(wire.decode(&req, 2).unwrap(), resp);
    }
}
