//! JSON-lines corpus files: one question per line.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::logic::{Form, GroundTruth};
use super::questions::Category;
use super::HarnessError;
use crate::grounding::Scene;

/// A scene given inline or as a path to a scene JSON file. Relative paths
/// are resolved against the corpus file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Inline(Scene),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub scene: SceneSource,
    pub category: Category,
    pub question_text: String,
    pub program: String,
    pub ground_truth: GroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logical_form: Option<Form>,
    /// Answer of an end-to-end model, used as the fallback when verifying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_answer: Option<GroundTruth>,
}

impl CorpusRecord {
    /// The inline scene. Records returned by [`read_corpus`] always have one.
    pub fn scene(&self) -> Option<&Scene> {
        match &self.scene {
            SceneSource::Inline(s) => Some(s),
            SceneSource::Path(_) => None,
        }
    }
}

/// Reads a corpus, loading scene files so that every record is inline.
/// Blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_corpus(&text, base)
}

pub fn parse_corpus(text: &str, base: &Path) -> Result<Vec<CorpusRecord>, HarnessError> {
    let mut scenes: HashMap<PathBuf, Scene> = HashMap::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corpus_err = |message: String| HarnessError::Corpus {
            line: i + 1,
            message,
        };
        let mut record: CorpusRecord =
            serde_json::from_str(line).map_err(|e| corpus_err(e.to_string()))?;
        let scene = match &record.scene {
            SceneSource::Inline(s) => s.clone(),
            SceneSource::Path(p) => {
                let full = base.join(p);
                if let Some(s) = scenes.get(&full) {
                    s.clone()
                } else {
                    let s = Scene::load(&full)
                        .map_err(|e| corpus_err(format!("{}: {e}", full.display())))?;
                    scenes.insert(full, s.clone());
                    s
                }
            }
        };
        scene.validate().map_err(|e| corpus_err(e.to_string()))?;
        record.scene = SceneSource::Inline(scene);
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus(records: &[CorpusRecord], mut out: impl Write) -> Result<(), HarnessError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
