mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{iou_ref, logistic};
use nept_core::grounding::mock::{MockServer, Reply};
use nept_core::grounding::{
    normalize_logits, Arity, BBox, Grounder, GroundingError, GroundingRequest, OracleGrounder,
    RemoteConfig, RemoteGrounder, Scene,
};
use proptest::prelude::*;
use serde_json::json;

fn remote(server: &MockServer, n: usize) -> RemoteGrounder {
    let mut config = RemoteConfig::new(server.url());
    config.timeout = Duration::from_millis(500);
    config.retries = 1;
    config.max_in_flight = 8;
    RemoteGrounder::new(config, n)
}

fn fixed(body: serde_json::Value) -> MockServer {
    MockServer::start(move |_| Reply::Json(body.clone())).unwrap()
}

#[test]
fn logits_become_probabilities() {
    let server = fixed(json!({"logits": [[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]]}));
    let s = remote(&server, 3).score("red", Arity::Object).unwrap();
    for (got, want) in s.iter().zip([0.88080, 0.11920, 0.5]) {
        assert!((got - want).abs() < 1e-5, "{s:?}");
    }
}

#[test]
fn pair_scores_must_be_square() {
    let server = fixed(json!({"scores": [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]}));
    let e = remote(&server, 3).score("left", Arity::Pair).unwrap_err();
    assert!(matches!(e, GroundingError::Malformed(_)), "{e}");
    let server = fixed(json!({"scores": [[0.0, 0.2], [0.4, 0.0]]}));
    assert_eq!(
        remote(&server, 2).score("left", Arity::Pair).unwrap(),
        vec![0.0, 0.2, 0.4, 0.0]
    );
}

#[test]
fn out_of_range_and_service_errors() {
    let server = fixed(json!({"scores": [0.5, 1.5]}));
    let e = remote(&server, 2).score("red", Arity::Object).unwrap_err();
    assert_eq!(e, GroundingError::ScoreOutOfRange(1.5));
    let server = fixed(json!({"error": "model unavailable"}));
    let e = remote(&server, 2).score("red", Arity::Object).unwrap_err();
    assert!(matches!(e, GroundingError::Remote(_)));
    let server = MockServer::start(|_| Reply::Status(500, "boom".into())).unwrap();
    assert!(remote(&server, 2).score("red", Arity::Object).is_err());
}

#[test]
fn huge_logits_do_not_overflow() {
    assert_eq!(normalize_logits(1000.0, 0.0).unwrap(), 1.0);
    assert_eq!(normalize_logits(0.0, 1000.0).unwrap(), 0.0);
    assert_eq!(normalize_logits(1000.0, 1000.0).unwrap(), 0.5);
    assert!(normalize_logits(f64::NAN, 0.0).is_err());
}

proptest! {
    #[test]
    fn logit_normalization_is_logistic_of_the_margin(ly in -25.0..25.0f64, ln in -25.0..25.0f64) {
        let p = normalize_logits(ly, ln).unwrap();
        prop_assert!((p - logistic(ly - ln)).abs() < 1e-12);
        prop_assert!((p + normalize_logits(ln, ly).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn identical_requests_share_one_network_call() {
    let server = MockServer::start(|_| {
        std::thread::sleep(Duration::from_millis(50));
        Reply::Json(json!({"scores": [0.25, 0.75]}))
    })
    .unwrap();
    let g = Arc::new(remote(&server, 2));
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let g = Arc::clone(&g);
            std::thread::spawn(move || {
                let q = if i % 2 == 0 { "red" } else { "blue" };
                g.score(q, Arity::Object).unwrap()
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), vec![0.25, 0.75]);
    }
    assert_eq!(server.request_count(), 2);
    assert_eq!(g.network_calls(), 2);
    g.score("red", Arity::Object).unwrap();
    assert_eq!(server.request_count(), 2);
}

#[test]
fn stalled_service_times_out_after_retries() {
    let server = MockServer::start(|_| Reply::Stall(Duration::from_secs(3))).unwrap();
    let g = remote(&server, 2);
    let start = Instant::now();
    let e = g.score("red", Arity::Object).unwrap_err();
    assert_eq!(e, GroundingError::Timeout { attempts: 2 });
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn requests_serialize_to_the_wire_shape() {
    let r = GroundingRequest::score("left of", Arity::Pair, 2);
    let v = serde_json::to_value(&r).unwrap();
    assert_eq!(v["kind"], "score");
    assert_eq!(v["num_objects"], 2);
    let back: GroundingRequest = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
}

fn scene() -> Scene {
    Scene::from_json(
        r#"{"objects":[
         {"id":0,"box":[0,0,10,10],"depth":1,"class":"cube","attributes":["red"]},
         {"id":1,"box":[20,0,10,10],"depth":2,"class":"sphere","attributes":["blue"]}],
         "relations":[[0,"left",1]]}"#,
    )
    .unwrap()
}

#[test]
fn oracle_answers_from_the_scene_graph() {
    let g = OracleGrounder::new(scene());
    assert_eq!(g.score("red", Arity::Object).unwrap(), vec![1.0, 0.0]);
    assert_eq!(
        g.score("left", Arity::Pair).unwrap(),
        vec![0.0, 1.0, 0.0, 0.0]
    );
    assert!(matches!(
        g.score("flibber", Arity::Object),
        Err(GroundingError::UnknownPredicate(_))
    ));
}

#[test]
fn iou_matches_reference() {
    let a = BBox::from([0.0, 0.0, 2.0, 1.0]);
    let b = BBox::from([1.0, 0.0, 2.0, 1.0]);
    assert_eq!(a.iou(&a), 1.0);
    assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(a.iou(&BBox::from([5.0, 5.0, 1.0, 1.0])), 0.0);
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(
        a in (0.0..50.0f64, 0.0..50.0f64, 0.1..50.0f64, 0.1..50.0f64),
        b in (0.0..50.0f64, 0.0..50.0f64, 0.1..50.0f64, 0.1..50.0f64),
    ) {
        let (ra, rb) = ([a.0, a.1, a.2, a.3], [b.0, b.1, b.2, b.3]);
        let (ba, bb) = (BBox::from(ra), BBox::from(rb));
        let v = ba.iou(&bb);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - bb.iou(&ba)).abs() < 1e-12);
        prop_assert!((v - iou_ref(ra, rb)).abs() < 1e-9);
    }
}
