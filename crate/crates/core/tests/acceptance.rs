//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion does.

mod common;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use common::{argmax_first, gradient_check, iou_ref, logistic, random_problem, softmax_ref};
use nept_core::exec::{run, Answer, ExecOptions, Task};
use nept_core::grounding::mock::{MockServer, Reply};
use nept_core::grounding::{
    normalize_logits, Arity, BBox, Grounder, GroundingError, GroundingRequest, GroundingResponse,
    OracleGrounder, RemoteConfig, RemoteGrounder, Scene,
};
use nept_core::harness::{evaluate, gen_corpus, is_correct, EvalConfig, GroundTruth};
use nept_core::lang::{parse_program, pretty_print};
use nept_core::tensor::{
    softmax, Comparison, Connective, Quantifier, SmoothingParams, SoftValue, Tape,
};
use nept_core::verify::{confidence_gate, GateParams, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{name}: got {got}, want {want}")
    })
}

fn vector(t: &mut Tape, v: &[f64]) -> SoftValue {
    t.leaf(SoftValue::vector(v.to_vec()).unwrap())
}

fn compare(kind: Comparison, a: f64, b: f64) -> f64 {
    let mut t = Tape::new();
    let (a, b) = (
        t.leaf(SoftValue::soft_count(a).unwrap()),
        t.leaf(SoftValue::soft_count(b).unwrap()),
    );
    t.soft_compare(kind, &a, &b, SmoothingParams::default())
        .unwrap()
        .item()
        .unwrap()
}

fn connective(c: Connective, a: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let mut t = Tape::new();
    let a = vector(&mut t, a);
    let b = b.map(|b| vector(&mut t, b));
    t.connective(c, &a, b.as_ref()).unwrap().data().to_vec()
}

fn quantify(q: Quantifier, v: &[f64]) -> Vec<f64> {
    let mut t = Tape::new();
    let v = vector(&mut t, v);
    t.quantify(q, &v).unwrap().data().to_vec()
}

fn closed_forms() -> Check {
    let (tau, gamma) = (0.25, 0.25);
    let eq = |a: f64, b: f64| logistic(tau * (gamma - (a - b).abs()) / gamma);
    let gt = |a: f64, b: f64| logistic(tau * (a - b - 1.0 + gamma));
    let cases = [
        (
            "Eq(s, s)",
            compare(Comparison::Eq, 2.0, 2.0),
            eq(2.0, 2.0),
            0.56218,
        ),
        (
            "Eq(0.8, 0.3)",
            compare(Comparison::Eq, 0.8, 0.3),
            eq(0.8, 0.3),
            0.43782,
        ),
        (
            "Gt(5, 3)",
            compare(Comparison::Gt, 5.0, 3.0),
            gt(5.0, 3.0),
            0.57750,
        ),
        (
            "Gt(2, 2)",
            compare(Comparison::Gt, 2.0, 2.0),
            gt(2.0, 2.0),
            0.45326,
        ),
    ];
    for (name, got, reference, published) in cases {
        close(name, got, reference, 1e-12)?;
        close(name, got, published, 1e-5)?;
    }
    // Vector leaves live in [0, 1], so the unbounded example goes through
    // the kernel directly; the operator itself is checked on a leaf.
    let iota = softmax(&[2.0, 0.0, 0.0]);
    for ((got, r), p) in iota
        .iter()
        .zip(softmax_ref(&[2.0, 0.0, 0.0]))
        .zip([0.78699, 0.10650, 0.10650])
    {
        close("iota", *got, r, 1e-12)?;
        close("iota", *got, p, 1e-5)?;
    }
    let leaf = [0.9, 0.2, 0.2];
    for (got, r) in quantify(Quantifier::Iota, &leaf)
        .iter()
        .zip(softmax_ref(&leaf))
    {
        close("iota", *got, r, 1e-12)?;
    }
    let mut t = Tape::new();
    let (a, b) = (
        t.leaf(SoftValue::soft_count(0.8).unwrap()),
        t.leaf(SoftValue::soft_count(0.3).unwrap()),
    );
    let out = t
        .soft_compare(Comparison::Eq, &a, &b, SmoothingParams::default())
        .unwrap();
    let g = t.backward(&out).unwrap().get(a.node().unwrap()).unwrap()[0];
    let s = eq(0.8, 0.3);
    close("dEq/ds1", g, -s * (1.0 - s) * tau / gamma, 1e-12)?;
    close("dEq/ds1", g, -0.24614, 1e-5)?;
    Ok("comparisons, iota and the equality gradient agree".into())
}

fn algebra() -> Check {
    const CASES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let unit = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()
    };
    let in_unit = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
    let not = |v: &[f64]| connective(Connective::Not, v, None);
    for i in 0..CASES {
        let n = rng.gen_range(1..=8);
        let (a, b) = (unit(&mut rng, n), unit(&mut rng, n));
        let and = connective(Connective::And, &a, Some(&b));
        let or = connective(Connective::Or, &a, Some(&b));
        let imp = connective(Connective::Implies, &a, Some(&b));
        ensure(
            in_unit(&and) && in_unit(&or) && in_unit(&imp) && in_unit(&not(&a)),
            || format!("case {i}: range"),
        )?;
        for q in [Quantifier::Exists, Quantifier::Forall, Quantifier::Iota] {
            ensure(in_unit(&quantify(q, &a)), || {
                format!("case {i}: {q:?} range")
            })?;
        }
        ensure(
            not(&and) == connective(Connective::Or, &not(&a), Some(&not(&b))),
            || format!("case {i}: De Morgan"),
        )?;
        ensure(
            1.0 - quantify(Quantifier::Exists, &a)[0] == quantify(Quantifier::Forall, &not(&a))[0],
            || format!("case {i}: quantifier duality"),
        )?;
        ensure(
            imp == connective(Connective::Or, &not(&a), Some(&b)),
            || format!("case {i}: implication"),
        )?;
        ensure(connective(Connective::And, &a, Some(&a)) == a, || {
            format!("case {i}: idempotence")
        })?;
        ensure(and == connective(Connective::And, &b, Some(&a)), || {
            format!("case {i}: commutativity")
        })?;
        ensure(or == connective(Connective::Or, &b, Some(&a)), || {
            format!("case {i}: commutativity")
        })?;
        let p = quantify(Quantifier::Iota, &a);
        ensure((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12, || {
            format!("case {i}: iota sum")
        })?;
        ensure(argmax_first(&p) == argmax_first(&a), || {
            format!("case {i}: iota argmax")
        })?;
        let (x, y) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
        ensure(
            compare(Comparison::Eq, x, y) == compare(Comparison::Eq, y, x),
            || format!("case {i}: Eq symmetry"),
        )?;
        let d = (x - y).abs();
        ensure(
            compare(Comparison::Eq, 0.0, d + rng.gen_range(0.01..5.0))
                < compare(Comparison::Eq, 0.0, d),
            || format!("case {i}: Eq monotonicity"),
        )?;
    }
    Ok(format!("{CASES} cases per property"))
}

fn gradients() -> Check {
    const WANT: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let (mut checked, mut skipped, mut entries, mut worst) = (0, 0, 0, 0.0f64);
    while checked < WANT {
        let p = random_problem(&mut rng, 6, 8);
        match gradient_check(&p, 1e-5, 1e-3) {
            Some(c) => {
                checked += 1;
                entries += c.entries;
                worst = worst.max(c.max_rel_error);
                ensure(c.max_rel_error < 1e-4, || {
                    format!("{:?}: rel error {}", p.root, c.max_rel_error)
                })?;
            }
            None => {
                skipped += 1;
                ensure(skipped < 10 * WANT, || "too many points near a kink".into())?;
            }
        }
    }
    Ok(format!(
        "{checked} expressions, {entries} partials, max relative error {worst:.2e} ({skipped} near-kink draws redrawn)"
    ))
}

fn crisp_equivalence() -> Check {
    let (records, failures) = gen_corpus(500, 500, 1, None);
    ensure(failures.is_empty(), || {
        format!("generation failures: {failures:?}")
    })?;
    let factory = |s: &Scene| -> Box<dyn Grounder> { Box::new(OracleGrounder::new(s.clone())) };
    let config = EvalConfig {
        jobs: 1,
        ..EvalConfig::default()
    };
    let report = evaluate(&records, &factory, &config);
    ensure(
        report.execution_success == 1.0 && report.accuracy == 1.0,
        || report.to_table(),
    )?;
    Ok(format!("{} questions, accuracy 100%", report.total))
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn parser_corpus() -> Check {
    let mut programs = 0;
    for entry in std::fs::read_dir(data_dir().join("programs")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let src = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let ast = parse_program(&src).map_err(|e| format!("{}: {e}", path.display()))?;
        let again =
            parse_program(&pretty_print(&ast)).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(again == ast, || {
            format!("{}: round trip changed the tree", path.display())
        })?;
        programs += 1;
    }
    ensure(programs >= 50, || format!("only {programs} programs"))?;
    let text =
        std::fs::read_to_string(data_dir().join("malformed.json")).map_err(|e| e.to_string())?;
    let cases: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for c in &cases {
        let name = c["name"].as_str().unwrap_or("?");
        let e = match parse_program(c["source"].as_str().unwrap_or_default()) {
            Ok(_) => return Err(format!("{name}: accepted")),
            Err(e) => e,
        };
        let want = (
            c["line"].as_u64().unwrap_or(0) as usize,
            c["column"].as_u64().unwrap_or(0) as usize,
        );
        ensure((e.line, e.column) == want, || {
            format!("{name}: reported at {}:{}", e.line, e.column)
        })?;
        ensure(
            e.message
                .contains(c["message"].as_str().unwrap_or_default()),
            || format!("{name}: {e}"),
        )?;
    }
    Ok(format!(
        "{programs} programs round-trip, {} malformed programs located",
        cases.len()
    ))
}

fn remote(server: &MockServer, n: usize, retries: u32) -> RemoteGrounder {
    let mut config = RemoteConfig::new(server.url());
    config.timeout = Duration::from_millis(300);
    config.retries = retries;
    config.max_in_flight = 8;
    RemoteGrounder::new(config, n)
}

fn grounding_protocol() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    for _ in 0..10_000 {
        let (ly, ln) = (rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0));
        let p = normalize_logits(ly, ln).map_err(|e| e.to_string())?;
        close("logits", p, logistic(ly - ln), 1e-12)?;
    }
    for (ly, ln, want) in [
        (1000.0, 0.0, 1.0),
        (0.0, 1000.0, 0.0),
        (1000.0, 1000.0, 0.5),
    ] {
        close(
            "large logits",
            normalize_logits(ly, ln).map_err(|e| e.to_string())?,
            want,
            0.0,
        )?;
    }

    let server = MockServer::start(|r: &GroundingRequest| {
        if r.num_objects == Some(Arity::Pair) {
            Reply::Json(json!({"scores": [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]}))
        } else {
            std::thread::sleep(Duration::from_millis(30));
            Reply::Json(json!({"logits": [[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]]}))
        }
    })
    .map_err(|e| e.to_string())?;
    let g = Arc::new(remote(&server, 3, 0));
    let handles: Vec<_> = (0..12)
        .map(|_| {
            let g = Arc::clone(&g);
            std::thread::spawn(move || g.score("red", Arity::Object))
        })
        .collect();
    for h in handles {
        let s = h
            .join()
            .map_err(|_| "worker panicked".to_string())?
            .map_err(|e| e.to_string())?;
        for (got, want) in s.iter().zip([0.88080, 0.11920, 0.5]) {
            close("logit scores", *got, want, 1e-5)?;
        }
    }
    ensure(server.request_count() == 1, || {
        format!("{} network calls for one request", server.request_count())
    })?;
    let e = g.score("left", Arity::Pair).err();
    ensure(matches!(e, Some(GroundingError::Malformed(_))), || {
        format!("2x3 matrix gave {e:?}")
    })?;

    let stalled =
        MockServer::start(|_| Reply::Stall(Duration::from_secs(2))).map_err(|e| e.to_string())?;
    let e = remote(&stalled, 2, 1).score("red", Arity::Object).err();
    ensure(e == Some(GroundingError::Timeout { attempts: 2 }), || {
        format!("stall gave {e:?}")
    })?;
    Ok("logit normalization, shape checks, single-flight cache and timeouts".into())
}

fn gate() -> Check {
    let check = |scores: &[f64], t: f64, temp: f64| -> Result<(f64, Source), String> {
        let p = GateParams::new(t, temp).map_err(|e| e.to_string())?;
        let d = confidence_gate(scores, &p).map_err(|e| e.to_string())?;
        Ok((d.max_probability, d.chosen))
    };
    let (p, s) = check(&[2.0, 0.0], 0.5, 1.0)?;
    close("gate [2, 0]", p, 0.88080, 1e-5)?;
    ensure(s == Source::Symbolic, || {
        "[2, 0] should stay symbolic".into()
    })?;
    let (p, s) = check(&[0.1, 0.1], 0.6, 1.0)?;
    close("gate [0.1, 0.1]", p, 0.5, 1e-12)?;
    ensure(s == Source::Backbone, || {
        "[0.1, 0.1] should fall back".into()
    })?;
    for (name, t, temp) in [
        ("qwen2vl", 0.70, 0.40),
        ("ovis", 0.30, 0.10),
        ("internvl", 0.60, 0.50),
    ] {
        let p = GateParams::preset(name).map_err(|e| e.to_string())?;
        ensure((p.threshold, p.temperature) == (t, temp), || {
            format!("preset {name}: {p:?}")
        })?;
    }
    let qwen = GateParams::preset("qwen2vl").map_err(|e| e.to_string())?;
    let d = confidence_gate(&[1.0, 0.0], &qwen).map_err(|e| e.to_string())?;
    close("qwen2vl [1, 0]", d.max_probability, logistic(2.5), 1e-12)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    for i in 0..1000 {
        let k = rng.gen_range(2..=8);
        let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shift = rng.gen_range(-10.0..10.0);
        let (base, _) = check(&scores, 0.5, 0.7)?;
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        close(
            &format!("case {i}: shift"),
            check(&shifted, 0.5, 0.7)?.0,
            base,
            1e-12,
        )?;
        let mut rev = scores.clone();
        rev.reverse();
        close(
            &format!("case {i}: permutation"),
            check(&rev, 0.5, 0.7)?.0,
            base,
            1e-12,
        )?;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted[k - 1] - sorted[k - 2] > 1e-2 {
            close(
                &format!("case {i}: cold"),
                check(&scores, 0.5, 1e-4)?.0,
                1.0,
                1e-9,
            )?;
        }
        close(
            &format!("case {i}: hot"),
            check(&scores, 0.5, 1e6)?.0,
            1.0 / k as f64,
            1e-5,
        )?;
    }
    Ok("worked examples, presets and 1000 limit cases".into())
}

struct FixedScores(Vec<f64>);

impl Grounder for FixedScores {
    fn object_count(&self) -> usize {
        self.0.len()
    }

    fn ground(&self, _: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        Ok(GroundingResponse::Scores(self.0.clone()))
    }
}

fn referring() -> Check {
    let a = [0.0, 0.0, 2.0, 1.0];
    let b = [1.0, 0.0, 2.0, 1.0];
    let (ba, bb) = (BBox::from(a), BBox::from(b));
    close("IoU identity", ba.iou(&ba), 1.0, 1e-12)?;
    close("IoU offset", ba.iou(&bb), 1.0 / 3.0, 1e-12)?;
    close("IoU reference", ba.iou(&bb), iou_ref(a, b), 1e-12)?;
    close("IoU symmetry", bb.iou(&ba), ba.iou(&bb), 0.0)?;

    let program = parse_program("return score(\"target\", 1)\n").map_err(|e| e.to_string())?;
    let opts = ExecOptions {
        task: Task::Reg,
        ..ExecOptions::default()
    };
    let out = run(&program, &FixedScores(vec![0.1, 0.8, 0.8]), &opts).map_err(|e| e.to_string())?;
    let Answer::ObjectRef { id, .. } = out.answer else {
        return Err(format!("expected an object, got {:?}", out.answer));
    };
    ensure(id == 1, || format!("tie resolved to {id}"))?;

    let scene = Scene {
        objects: (0..2)
            .map(|i| nept_core::grounding::SceneObject {
                id: i,
                bbox: BBox::from([i as f64 * 100.0, 0.0, 10.0, 10.0]),
                depth: None,
                class: "cube".into(),
                attributes: Default::default(),
            })
            .collect(),
        ..Scene::default()
    };
    let near = GroundTruth::Object {
        id: 9,
        bbox: BBox::from([2.0, 0.0, 10.0, 10.0]),
    };
    let answer = |id| Answer::ObjectRef {
        id,
        distribution: vec![],
    };
    ensure(is_correct(&answer(0), &near, &scene), || {
        "IoU 0.67 should count as correct".into()
    })?;
    ensure(!is_correct(&answer(1), &near, &scene), || {
        "disjoint box should be wrong".into()
    })?;
    Ok("IoU values and lowest-index tie breaking".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("closed-form operator values", closed_forms),
        ("soft-logic algebra", algebra),
        ("reverse-mode gradients", gradients),
        ("crisp equivalence with brute force", crisp_equivalence),
        ("parser corpus and diagnostics", parser_corpus),
        ("grounding protocol", grounding_protocol),
        ("confidence gate", gate),
        ("referring expressions", referring),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {}. {name}: {why}", i + 1);
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
