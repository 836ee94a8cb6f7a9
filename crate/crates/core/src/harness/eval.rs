//! Corpus evaluation: run every program, score it against ground truth and
//! optionally apply confidence gating against a backbone answer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::corpus::CorpusRecord;
use super::logic::GroundTruth;
use super::questions::Category;
use crate::exec::{run, Answer, ExecOptions};
use crate::grounding::{Grounder, Scene};
use crate::lang::parse_program;
use crate::verify::{arbitrate, confidence_gate, yes_no_scores, GateParams, Source};

/// Minimum IoU for a referring answer to count as correct.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalConfig {
    /// The task is taken from each record's category.
    pub exec: ExecOptions,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    pub gate: Option<GateParams>,
    /// Ask the grounder to arbitrate when the gate rejects a referring answer.
    pub arbiter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifiedItem {
    pub source: Source,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_probability: Option<f64>,
    pub arbitrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemResult {
    pub index: usize,
    pub category: Category,
    pub executed: bool,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub grounder_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<VerifiedItem>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CategoryStats {
    pub total: usize,
    pub executed: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub params: GateParams,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    /// Share of items whose final answer is the executor's.
    pub symbolic_share: f64,
    pub arbiter_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub total: usize,
    pub executed: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub execution_success: f64,
    pub mean_grounder_calls: f64,
    pub wall_time_ms: f64,
    pub per_category: BTreeMap<Category, CategoryStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerifyReport>,
    pub items: Vec<ItemResult>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Whether `answer` matches `truth`. Referring answers are judged by the
/// IoU of the selected object's box in `scene`.
pub fn is_correct(answer: &Answer, truth: &GroundTruth, scene: &Scene) -> bool {
    match (answer, truth) {
        (Answer::YesNo { value, .. }, GroundTruth::YesNo(t)) => value == t,
        (Answer::Count { value, .. } | Answer::Integer { value }, GroundTruth::Count(t)) => {
            value == t
        }
        (Answer::Text { value }, GroundTruth::Text(t)) => {
            value.trim().eq_ignore_ascii_case(t.trim())
        }
        (Answer::ObjectRef { id, .. }, GroundTruth::Object { bbox, .. }) => scene
            .objects
            .get(*id)
            .is_some_and(|o| o.bbox.iou(bbox) >= IOU_THRESHOLD),
        _ => false,
    }
}

fn backbone_correct(backbone: &GroundTruth, truth: &GroundTruth) -> bool {
    match (backbone, truth) {
        (GroundTruth::Object { bbox: a, .. }, GroundTruth::Object { bbox: b, .. }) => {
            a.iou(b) >= IOU_THRESHOLD
        }
        (GroundTruth::Text(a), GroundTruth::Text(b)) => a.trim().eq_ignore_ascii_case(b.trim()),
        (a, b) => a == b,
    }
}

/// Scores fed to the gate: `[s, 1 - s]` for yes/no answers and the log of
/// the selection distribution (the raw scores up to a constant) for
/// referring answers. Other answers are not gated.
fn gate_scores(answer: &Answer) -> Option<Vec<f64>> {
    match answer {
        Answer::YesNo { score, .. } => Some(yes_no_scores(*score).to_vec()),
        Answer::ObjectRef { distribution, .. } => Some(
            distribution
                .iter()
                .map(|p| p.max(f64::MIN_POSITIVE).ln())
                .collect(),
        ),
        _ => None,
    }
}

fn evaluate_item<'a>(
    index: usize,
    record: &CorpusRecord,
    factory: &(dyn Fn(&Scene) -> Box<dyn Grounder + 'a> + Sync),
    config: &EvalConfig,
) -> ItemResult {
    let mut item = ItemResult {
        index,
        category: record.category,
        executed: false,
        correct: false,
        answer: None,
        error: None,
        grounder_calls: 0,
        verified: None,
    };
    let Some(scene) = record.scene() else {
        item.error = Some("scene was not loaded".into());
        return item;
    };
    let grounder = factory(scene);
    let opts = ExecOptions {
        task: record.category.task(),
        ..config.exec
    };
    let outcome = match parse_program(&record.program) {
        Err(e) => Err(e.to_string()),
        Ok(program) => {
            run(&program, grounder.as_ref(), &opts).map_err(|e| e.render(&record.program))
        }
    };
    match outcome {
        Ok(out) => {
            item.executed = true;
            item.correct = is_correct(&out.answer, &record.ground_truth, scene);
            item.grounder_calls = out.trace.len();
            item.answer = Some(out.answer);
        }
        Err(e) => item.error = Some(e),
    }
    if let Some(params) = &config.gate {
        item.verified = Some(verify_item(
            &item,
            record,
            grounder.as_ref(),
            params,
            config.arbiter,
        ));
    }
    item
}

fn verify_item(
    item: &ItemResult,
    record: &CorpusRecord,
    grounder: &dyn Grounder,
    params: &GateParams,
    use_arbiter: bool,
) -> VerifiedItem {
    let symbolic = VerifiedItem {
        source: Source::Symbolic,
        correct: item.correct,
        max_probability: None,
        arbitrated: false,
    };
    let Some(backbone) = &record.backbone_answer else {
        return symbolic;
    };
    let fallback = VerifiedItem {
        source: Source::Backbone,
        correct: backbone_correct(backbone, &record.ground_truth),
        max_probability: None,
        arbitrated: false,
    };
    let Some(answer) = &item.answer else {
        return fallback;
    };
    let Some(scores) = gate_scores(answer) else {
        return symbolic;
    };
    let Ok(decision) = confidence_gate(&scores, params) else {
        return symbolic;
    };
    let mut chosen = match decision.chosen {
        Source::Symbolic => symbolic,
        Source::Backbone => fallback,
    };
    chosen.max_probability = Some(decision.max_probability);
    if use_arbiter && chosen.source == Source::Backbone {
        if let (Answer::ObjectRef { id, .. }, GroundTruth::Object { id: bb, .. }) =
            (answer, backbone)
        {
            if let Ok(d) = arbitrate(grounder, &record.question_text, *id, *bb) {
                chosen.arbitrated = d.reply.is_some();
                if d.chosen == Source::Symbolic {
                    chosen.source = Source::Symbolic;
                    chosen.correct = item.correct;
                }
            }
        }
    }
    chosen
}

/// Runs every record with a grounder built by `factory` and aggregates the
/// results. Item failures are recorded, never raised.
pub fn evaluate<'a>(
    records: &[CorpusRecord],
    factory: &(dyn Fn(&Scene) -> Box<dyn Grounder + 'a> + Sync),
    config: &EvalConfig,
) -> Report {
    let start = Instant::now();
    let work = || -> Vec<ItemResult> {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| evaluate_item(i, r, factory, config))
            .collect()
    };
    let items = match rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
    {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    };
    let wall_time_ms = start.elapsed().as_secs_f64() * 1000.0;
    summarize(items, wall_time_ms, config.gate)
}

fn summarize(items: Vec<ItemResult>, wall_time_ms: f64, gate: Option<GateParams>) -> Report {
    let total = items.len();
    let executed = items.iter().filter(|i| i.executed).count();
    let correct = items.iter().filter(|i| i.correct).count();
    let calls: usize = items
        .iter()
        .filter(|i| i.executed)
        .map(|i| i.grounder_calls)
        .sum();
    let mut per_category: BTreeMap<Category, CategoryStats> = BTreeMap::new();
    for i in &items {
        let s = per_category.entry(i.category).or_default();
        s.total += 1;
        s.executed += usize::from(i.executed);
        s.correct += usize::from(i.correct);
    }
    for s in per_category.values_mut() {
        s.accuracy = ratio(s.correct, s.total);
    }
    let verification = gate.map(|params| {
        let verified: Vec<&VerifiedItem> =
            items.iter().filter_map(|i| i.verified.as_ref()).collect();
        VerifyReport {
            params,
            pre_accuracy: ratio(correct, total),
            post_accuracy: ratio(verified.iter().filter(|v| v.correct).count(), total),
            symbolic_share: ratio(
                verified
                    .iter()
                    .filter(|v| v.source == Source::Symbolic)
                    .count(),
                total,
            ),
            arbiter_calls: verified.iter().filter(|v| v.arbitrated).count(),
        }
    });
    Report {
        total,
        executed,
        correct,
        accuracy: ratio(correct, total),
        execution_success: ratio(executed, total),
        mean_grounder_calls: ratio(calls, executed),
        wall_time_ms,
        per_category,
        verification,
        items,
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

impl Report {
    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>7} {:>9} {:>9}",
            "category", "items", "executed", "accuracy"
        );
        for (c, s) in &self.per_category {
            let _ = writeln!(
                out,
                "{:<18} {:>7} {:>9} {:>9}",
                c.name(),
                s.total,
                s.executed,
                pct(s.accuracy)
            );
        }
        let _ = writeln!(
            out,
            "{:<18} {:>7} {:>9} {:>9}",
            "all",
            self.total,
            self.executed,
            pct(self.accuracy)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "execution success  {}", pct(self.execution_success));
        let _ = writeln!(out, "mean grounder calls {:.2}", self.mean_grounder_calls);
        let _ = writeln!(out, "wall time          {:.1} ms", self.wall_time_ms);
        if let Some(v) = &self.verification {
            let _ = writeln!(
                out,
                "verification       threshold {:.2}, temperature {:.2}",
                v.params.threshold, v.params.temperature
            );
            let _ = writeln!(out, "  before           {}", pct(v.pre_accuracy));
            let _ = writeln!(out, "  after            {}", pct(v.post_accuracy));
            let _ = writeln!(out, "  symbolic share   {}", pct(v.symbolic_share));
            if v.arbiter_calls > 0 {
                let _ = writeln!(out, "  arbiter calls    {}", v.arbiter_calls);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{BBox, OracleGrounder};
    use crate::harness::{gen_corpus, SceneSource};

    fn oracle<'a>() -> impl Fn(&Scene) -> Box<dyn Grounder + 'a> + Sync {
        |s: &Scene| Box::new(OracleGrounder::new(s.clone())) as Box<dyn Grounder>
    }

    #[test]
    fn oracle_corpus_is_exact() {
        let (records, failures) = gen_corpus(11, 4, 2, None);
        assert!(failures.is_empty());
        let report = evaluate(&records, &oracle(), &EvalConfig::default());
        assert_eq!(report.total, records.len());
        assert_eq!(
            report.correct,
            report.total,
            "{:#?}",
            report.items.iter().find(|i| !i.correct)
        );
        assert_eq!(report.execution_success, 1.0);
        assert_eq!(report.per_category.len(), 6);
    }

    #[test]
    fn corrupted_program_is_recorded() {
        let (mut records, _) = gen_corpus(2, 1, 1, None);
        records[0].program = "return (".into();
        let report = evaluate(
            &records,
            &oracle(),
            &EvalConfig {
                jobs: 1,
                ..EvalConfig::default()
            },
        );
        let k = records.len() as f64;
        assert_eq!(report.execution_success, (k - 1.0) / k);
        assert!(report.items[0].error.is_some());
    }

    #[test]
    fn gating_reports_symbolic_share() {
        let (records, _) = gen_corpus(4, 2, 1, Some(0.5));
        let config = EvalConfig {
            gate: Some(GateParams::preset("internvl").unwrap()),
            ..EvalConfig::default()
        };
        let report = evaluate(&records, &oracle(), &config);
        let v = report.verification.unwrap();
        assert!(v.symbolic_share > 0.0 && v.symbolic_share <= 1.0);
        assert!(v.post_accuracy <= 1.0);
    }

    #[test]
    fn iou_decides_referring_answers() {
        let (records, _) = gen_corpus(6, 1, 1, None);
        let r = records
            .iter()
            .find(|r| r.category == Category::Ref)
            .unwrap();
        let SceneSource::Inline(scene) = &r.scene else {
            panic!()
        };
        let GroundTruth::Object { id, .. } = r.ground_truth else {
            panic!()
        };
        let answer = Answer::ObjectRef {
            id,
            distribution: vec![1.0 / scene.len() as f64; scene.len()],
        };
        assert!(is_correct(&answer, &r.ground_truth, scene));
        let far = GroundTruth::Object {
            id,
            bbox: BBox::new(1000.0, 1000.0, 5.0, 5.0),
        };
        assert!(!is_correct(&answer, &far, scene));
    }
}
