//! Post-execution verification: confidence gating against a backbone
//! prediction, and a pairwise arbiter that asks the grounder to choose.
//!
//! The gate's threshold and temperature are unrelated to the smoothing
//! parameters of the soft comparisons, despite the shared letters.

use serde::Serialize;
use thiserror::Error;

use crate::grounding::{Grounder, GroundingError};
use crate::tensor::softmax;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("confidence gating needs at least one score")]
    EmptyScores,
    #[error("gate temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("gate threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("unknown gate preset {0:?}")]
    UnknownPreset(String),
    #[error("the arbiter needs a non-empty query")]
    EmptyQuery,
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateParams {
    /// Minimum max-probability for trusting the executor.
    pub threshold: f64,
    /// Softmax temperature applied to the executor's scores.
    pub temperature: f64,
}

/// Named gate settings tuned per perception backbone.
pub const GATE_PRESETS: &[(&str, GateParams)] = &[
    (
        "qwen2vl",
        GateParams {
            threshold: 0.70,
            temperature: 0.40,
        },
    ),
    (
        "ovis",
        GateParams {
            threshold: 0.30,
            temperature: 0.10,
        },
    ),
    (
        "internvl",
        GateParams {
            threshold: 0.60,
            temperature: 0.50,
        },
    ),
];

impl GateParams {
    pub fn new(threshold: f64, temperature: f64) -> Result<Self, VerifyError> {
        let p = GateParams {
            threshold,
            temperature,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn preset(name: &str) -> Result<Self, VerifyError> {
        GATE_PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, p)| *p)
            .ok_or_else(|| VerifyError::UnknownPreset(name.to_string()))
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(VerifyError::BadTemperature(self.temperature));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(VerifyError::BadThreshold(self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Symbolic,
    Backbone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateDecision {
    pub max_probability: f64,
    pub chosen: Source,
}

/// Two-entry score vector used to gate a yes/no answer.
pub fn yes_no_scores(score: f64) -> [f64; 2] {
    [score, 1.0 - score]
}

/// Keeps the symbolic answer when `max(softmax(scores / temperature))`
/// reaches the threshold, otherwise falls back to the backbone.
pub fn confidence_gate(scores: &[f64], params: &GateParams) -> Result<GateDecision, VerifyError> {
    params.validate()?;
    if scores.is_empty() {
        return Err(VerifyError::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(VerifyError::NonFiniteScore);
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / params.temperature).collect();
    let max_probability = softmax(&scaled).into_iter().fold(0.0, f64::max);
    let chosen = if max_probability < params.threshold {
        Source::Backbone
    } else {
        Source::Symbolic
    };
    Ok(GateDecision {
        max_probability,
        chosen,
    })
}

/// Applies [`confidence_gate`] and returns the chosen answer.
pub fn gate_answer<T>(
    scores: &[f64],
    symbolic: T,
    backbone: T,
    params: &GateParams,
) -> Result<(T, GateDecision), VerifyError> {
    let d = confidence_gate(scores, params)?;
    Ok(match d.chosen {
        Source::Symbolic => (symbolic, d),
        Source::Backbone => (backbone, d),
    })
}

const ARBITER_TEMPLATE: &str = "You're an image analyst designed to check if the highlighted objects in the image meets the query description, and which one is more likely to meet the query description.\n\nThe query is: \"{query}\"\n\nPlease check the highlighted object \"0\" [in the red bounding box] and \"1\" [in the green bounding box] in the image and answer the question: Which object is more likely to meet the query description? Your answer should be \"0\", \"1\". Answer with one word or phrase.";

/// The arbiter question for `query`. Candidate "0" is shown in the red box,
/// candidate "1" in the green box.
pub fn arbiter_prompt(query: &str) -> Result<String, VerifyError> {
    if query.trim().is_empty() {
        return Err(VerifyError::EmptyQuery);
    }
    Ok(ARBITER_TEMPLATE.replace("{query}", query))
}

/// Reads the arbiter's choice from the first non-blank, non-punctuation
/// character. `None` means the reply was unusable.
pub fn arbiter_decide(reply: &str) -> Option<u8> {
    let c = reply
        .chars()
        .find(|c| !c.is_whitespace() && !matches!(c, '"' | '\'' | '`' | '(' | '[' | '*' | ':'))?;
    let rest_is_word_boundary = |digit: char| {
        let after = reply.split_once(digit).map_or("", |(_, r)| r);
        !after.starts_with(|ch: char| ch.is_ascii_digit())
    };
    match c {
        '0' if rest_is_word_boundary('0') => Some(0),
        '1' if rest_is_word_boundary('1') => Some(1),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArbiterDecision {
    pub chosen: Source,
    /// The grounder's raw reply; `None` when both candidates agreed and no
    /// call was made.
    pub reply: Option<String>,
    pub unparseable: bool,
}

/// Asks `grounder` which of the symbolic (red, "0") and backbone (green,
/// "1") objects better matches `query`. Unusable replies keep the symbolic
/// answer.
pub fn arbitrate(
    grounder: &dyn Grounder,
    query: &str,
    symbolic: usize,
    backbone: usize,
) -> Result<ArbiterDecision, VerifyError> {
    let prompt = arbiter_prompt(query)?;
    if symbolic == backbone {
        return Ok(ArbiterDecision {
            chosen: Source::Symbolic,
            reply: None,
            unparseable: false,
        });
    }
    let reply = grounder.query(&prompt, &[symbolic, backbone])?;
    let choice = arbiter_decide(&reply);
    Ok(ArbiterDecision {
        chosen: if choice == Some(1) {
            Source::Backbone
        } else {
            Source::Symbolic
        },
        unparseable: choice.is_none(),
        reply: Some(reply),
    })
}
