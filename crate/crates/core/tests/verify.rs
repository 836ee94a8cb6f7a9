mod common;

use common::{logistic, softmax_ref};
use nept_core::grounding::{OracleGrounder, Scene};
use nept_core::verify::{
    arbiter_decide, arbitrate, confidence_gate, GateParams, Source, GATE_PRESETS,
};
use proptest::prelude::*;

fn gate(scores: &[f64], threshold: f64, temperature: f64) -> (f64, Source) {
    let d = confidence_gate(scores, &GateParams::new(threshold, temperature).unwrap()).unwrap();
    (d.max_probability, d.chosen)
}

#[test]
fn worked_examples() {
    let (p, s) = gate(&[2.0, 0.0], 0.5, 1.0);
    assert!((p - 0.88080).abs() < 1e-5);
    assert_eq!(s, Source::Symbolic);
    let (p, s) = gate(&[0.1, 0.1], 0.6, 1.0);
    assert_eq!(p, 0.5);
    assert_eq!(s, Source::Backbone);
    let qwen = GateParams::preset("qwen2vl").unwrap();
    let d = confidence_gate(&[1.0, 0.0], &qwen).unwrap();
    assert!((d.max_probability - logistic(2.5)).abs() < 1e-12);
    assert_eq!(d.chosen, Source::Symbolic);
}

#[test]
fn presets() {
    let expect = [
        ("qwen2vl", 0.70, 0.40),
        ("ovis", 0.30, 0.10),
        ("internvl", 0.60, 0.50),
    ];
    assert_eq!(GATE_PRESETS.len(), expect.len());
    for (name, t, temp) in expect {
        let p = GateParams::preset(name).unwrap();
        assert_eq!((p.threshold, p.temperature), (t, temp));
    }
    assert!(GateParams::preset("llava").is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(GateParams::new(0.5, 0.0).is_err());
    assert!(GateParams::new(1.0, 1.0).is_err());
    let p = GateParams::new(0.5, 1.0).unwrap();
    assert!(confidence_gate(&[], &p).is_err());
    assert!(confidence_gate(&[f64::NAN], &p).is_err());
}

#[test]
fn arbiter_reads_the_first_digit() {
    assert_eq!(arbiter_decide("1"), Some(1));
    assert_eq!(arbiter_decide(" \"0\"."), Some(0));
    assert_eq!(arbiter_decide("10"), None);
    assert_eq!(arbiter_decide("neither"), None);
}

#[test]
fn arbiter_skips_the_call_when_candidates_agree() {
    let g = OracleGrounder::new(Scene::default());
    let d = arbitrate(&g, "the red cube", 2, 2).unwrap();
    assert_eq!(d.chosen, Source::Symbolic);
    assert!(d.reply.is_none());
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 1..=10)
}

proptest! {
    #[test]
    fn max_probability_matches_reference(s in scores(), temp in 0.05..5.0f64) {
        let (p, _) = gate(&s, 0.5, temp);
        let scaled: Vec<f64> = s.iter().map(|x| x / temp).collect();
        let want = softmax_ref(&scaled).into_iter().fold(0.0, f64::max);
        prop_assert!((p - want).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_shift_and_permutation(s in scores(), shift in -10.0..10.0f64, temp in 0.1..3.0f64) {
        let (p, _) = gate(&s, 0.5, temp);
        let shifted: Vec<f64> = s.iter().map(|x| x + shift).collect();
        prop_assert!((gate(&shifted, 0.5, temp).0 - p).abs() < 1e-12);
        let mut rev = s.clone();
        rev.reverse();
        prop_assert!((gate(&rev, 0.5, temp).0 - p).abs() < 1e-12);
    }

    #[test]
    fn temperature_limits(s in prop::collection::vec(-1.0..1.0f64, 2..=8)) {
        let k = s.len() as f64;
        let (cold, _) = gate(&s, 0.5, 1e-4);
        let (hot, _) = gate(&s, 0.5, 1e6);
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let top = sorted[sorted.len() - 1];
        if top - sorted[sorted.len() - 2] > 1e-2 {
            prop_assert!(cold > 1.0 - 1e-9);
        }
        prop_assert!(cold >= 1.0 / k);
        prop_assert!((hot - 1.0 / k).abs() < 1e-5);
    }

    #[test]
    fn decision_follows_threshold(s in scores(), t in 0.01..0.99f64, temp in 0.1..3.0f64) {
        let (p, src) = gate(&s, t, temp);
        prop_assert_eq!(src, if p < t { Source::Backbone } else { Source::Symbolic });
    }
}
