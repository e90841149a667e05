use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use shape_macros::exec::execute;
use shape_macros::library::Library;
use shape_macros::search::SearchConfig;
use shape_macros_toolkit::corpus::{generate_corpus, ladder_macro, CorpusSpec};
use shape_macros_toolkit::service::{router, EditorService};

struct Fixture {
    svc: Arc<EditorService>,
    corpus: shape_macros_toolkit::corpus::Corpus,
    _dir: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let corpus = generate_corpus(&CorpusSpec::planted(30, 0.4, 9)).unwrap();
    let d = corpus.dataset(4).unwrap();
    let lib = Library::base().with_macro(ladder_macro()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let svc = EditorService::new(&d, corpus.families(), lib, &SearchConfig::default(), 10, 1, &dir.path().join("edits.jsonl")).unwrap();
    Fixture {
        svc: Arc::new(svc),
        corpus,
        _dir: dir,
    }
}

async fn call(f: &Fixture, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(f.svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

#[tokio::test]
async fn lists_programs() {
    let f = fixture();
    let (s, v) = call(&f, "GET", "/programs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 30);
    let (s, v) = call(&f, "GET", "/programs/0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["base_text"].as_str().unwrap().starts_with("bbox = Cuboid("));
    assert!(!v["macro_text"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn planted_programs_show_the_macro_call() {
    let f = fixture();
    let (i, _) = f.corpus.planted().next().unwrap();
    let (_, v) = call(&f, "GET", &format!("/programs/{i}"), None).await;
    assert!(v["macro_text"].as_str().unwrap().contains("ladder("), "{}", v["macro_text"]);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let f = fixture();
    assert_eq!(call(&f, "GET", "/programs/999", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&f, "POST", "/programs/999/execute", Some(json!({}))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&f, "GET", "/tasks/999", None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = call(&f, "POST", "/programs/0/distance", Some(json!({ "target": 999 }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn base_execution_matches_executor_export() {
    let f = fixture();
    for i in [0, 11, 25] {
        let (s, v) = call(&f, "POST", &format!("/programs/{i}/execute"), Some(json!({ "mode": "base" }))).await;
        assert_eq!(s, StatusCode::OK);
        let want = serde_json::to_value(execute::<f64>(&f.corpus.programs[i].program).unwrap().export()).unwrap();
        assert_eq!(v, want);
    }
}

#[tokio::test]
async fn override_then_revert_restores_geometry() {
    let f = fixture();
    let (_, p) = call(&f, "GET", "/programs/3", None).await;
    let slider = &p["sliders"]["macro"][0];
    let (call_i, arg, value) = (slider["call"].clone(), slider["arg"].clone(), slider["value"].as_f64().unwrap());
    let (_, orig) = call(&f, "POST", "/programs/3/execute", Some(json!({}))).await;
    let moved = json!({ "overrides": [{ "call": call_i, "arg": arg, "value": value + 0.05 }] });
    let (s, changed) = call(&f, "POST", "/programs/3/execute", Some(moved)).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(changed, orig);
    let back = json!({ "overrides": [{ "call": call_i, "arg": arg, "value": value }] });
    assert_eq!(call(&f, "POST", "/programs/3/execute", Some(back)).await.1, orig);
}

#[tokio::test]
async fn malformed_overrides_report_slots() {
    let f = fixture();
    let body = json!({ "mode": "base", "overrides": [
        { "call": 0, "arg": 3, "value": 1.0 },
        { "call": 500, "arg": 0, "value": 1.0 },
        { "call": 1, "arg": 9, "value": 1.0 },
        { "call": 2, "arg": 1, "value": 2.0 },
    ]});
    let (s, v) = call(&f, "POST", "/programs/0/execute", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let diags = v["diagnostics"].as_array().unwrap();
    assert_eq!(diags.len(), 4);
    assert_eq!(diags[1]["call"], 500);
    assert!(diags[0]["message"].as_str().unwrap().contains("not continuous"));
    assert!(diags[3]["message"].as_str().unwrap().contains("outside"));
    let req = Request::builder()
        .method("POST")
        .uri("/programs/0/execute")
        .header("content-type", "application/json")
        .body(Body::from(r#"{"overrides": "x"}"#))
        .unwrap();
    assert!(router(f.svc.clone()).oneshot(req).await.unwrap().status().is_client_error());
}

#[tokio::test]
async fn tasks_are_reachable_with_target_parameters() {
    let f = fixture();
    let (_, tasks) = call(&f, "GET", "/tasks", None).await;
    let tasks = tasks.as_array().unwrap();
    assert!(!tasks.is_empty());
    for t in tasks {
        let (src, tgt) = (t["source"].as_u64().unwrap(), t["target"].as_u64().unwrap());
        assert_eq!(f.svc.tasks()[t["id"].as_u64().unwrap() as usize].family, t["family"].as_str().unwrap());
        let (_, task) = call(&f, "GET", &format!("/tasks/{}", t["id"]), None).await;
        assert!(task["distance"].as_f64().unwrap() > 0.0);
        let (_, target) = call(&f, "GET", &format!("/programs/{tgt}"), None).await;
        let overrides: Vec<Value> = target["sliders"]["macro"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| json!({ "call": s["call"], "arg": s["arg"], "value": s["value"] }))
            .collect();
        let (s, d) = call(&f, "POST", &format!("/programs/{src}/distance"), Some(json!({ "overrides": overrides, "target": tgt }))).await;
        assert_eq!(s, StatusCode::OK);
        assert!(d["distance"].as_f64().unwrap() < 1e-6, "{d}");
    }
}

#[tokio::test]
async fn edit_log_is_append_only_json_lines() {
    let f = fixture();
    for k in 0..3 {
        let (s, v) = call(&f, "POST", "/log", Some(json!({ "task": 0, "slider": k }))).await;
        assert_eq!(s, StatusCode::OK);
        assert!(v["ts"].as_f64().unwrap() > 0.0);
    }
    let text = std::fs::read_to_string(f.svc.log_path()).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["event"]["slider"], 2);
}
