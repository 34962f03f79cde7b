use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cnnlab::http::{router, AppState};
use cnnlab_core::taskhub::{Hub, HubConfig};
use cnnlab_core::workspace::Workspace;

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

fn fixture(rel: &str) -> String {
    std::fs::read_to_string(format!("{ROOT}/fixtures/{rel}")).unwrap()
}

struct Checker {
    defs: Value,
    router: Router,
    checked: Vec<String>,
    _dir: tempfile::TempDir,
}

impl Checker {
    fn new() -> Self {
        let text = std::fs::read_to_string(format!("{ROOT}/docs/api.schema.json")).unwrap();
        let doc: Value = serde_json::from_str(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ws = Arc::new(Workspace::open(dir.path()).unwrap());
        let hub = Arc::new(Hub::new(HubConfig { workers: 2, feed_capacity: 1000, store: None }));
        Checker { defs: doc["$defs"].clone(), router: router(AppState { ws, hub }), checked: Vec::new(), _dir: dir }
    }

    fn assert_valid(&mut self, def: &str, value: &Value) {
        assert!(self.defs.get(def).is_some(), "no schema named {def}");
        let schema = json!({ "$ref": format!("#/$defs/{def}"), "$defs": self.defs });
        let validator = jsonschema::validator_for(&schema).unwrap();
        let errors: Vec<String> =
            validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
        assert!(errors.is_empty(), "{def}: {errors:?}\n{value:#}");
        self.checked.push(def.to_string());
    }

    async fn call(&mut self, method: Method, uri: &str, body: Option<Value>, status: StatusCode, def: &str) -> Value {
        if let (Some(b), Some(def)) = (&body, request_def(uri)) {
            self.assert_valid(def, b);
        }
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let got = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(got, status, "{uri}: {value}");
        if std::env::var_os("DUMP_RESPONSES").is_some() {
            eprintln!("== {uri} ({def})\n{value:#}");
        }
        let def = if got.is_success() { def } else { "ApiError" };
        self.assert_valid(def, &value);
        value
    }

    async fn finish(&mut self, task: &Value, result_def: &str) -> Value {
        let id = task["id"].as_str().unwrap().to_string();
        for _ in 0..600 {
            let rec = self.call(Method::GET, &format!("/tasks/{id}"), None, StatusCode::OK, "TaskRecord").await;
            if ["succeeded", "failed", "stopped"].contains(&rec["state"].as_str().unwrap()) {
                assert_eq!(rec["state"], "succeeded", "{rec}");
                self.assert_valid(result_def, &rec["result"]);
                return rec["result"].clone();
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("task {id} did not finish");
    }
}

fn request_def(uri: &str) -> Option<&'static str> {
    let path = uri.split('?').next().unwrap();
    let def = match path {
        "/datasets/import" => "ImportRequest",
        "/nets/validate" => "ValidateRequest",
        "/nets/complete" => "CompleteRequest",
        "/train" => "TrainRequest",
        "/experiments/extract" => "ExtractRequest",
        "/experiments/test" => "TestRequest",
        p if p.ends_with("/split") => "SplitRequest",
        p if p.ends_with("/export") => "ExportRequest",
        _ => return None,
    };
    Some(def)
}

#[tokio::test]
async fn every_response_matches_its_schema() {
    const GET: Method = Method::GET;
    const POST: Method = Method::POST;
    use StatusCode as S;
    let mut c = Checker::new();

    let t = c
        .call(POST, "/datasets/import", Some(json!({ "path": "synthetic:blobs:200:8:5" })), S::ACCEPTED, "TaskRecord")
        .await;
    let imported = c.finish(&t, "ImportResult").await;
    let dataset = imported["dataset_id"].as_str().unwrap().to_string();
    c.call(GET, "/datasets", None, S::OK, "DatasetList").await;
    let split = c
        .call(
            POST,
            &format!("/datasets/{dataset}/split"),
            Some(json!({ "train_fraction": 0.7, "seed": 2 })),
            S::OK,
            "SplitResult",
        )
        .await;
    let (train, test) =
        (split["train"]["id"].as_str().unwrap().to_string(), split["test"]["id"].as_str().unwrap().to_string());

    c.call(
        POST,
        "/nets/validate",
        Some(json!({ "text": fixture("nets/valid/tiny_conv.prototxt"), "input": [1, 1, 8, 8] })),
        S::OK,
        "ValidateReport",
    )
    .await;
    let bad = c
        .call(
            POST,
            "/nets/validate",
            Some(json!({ "text": fixture("nets/invalid/unclosed_brace.prototxt") })),
            S::OK,
            "ValidateReport",
        )
        .await;
    assert_eq!(bad["valid"], false);
    let v = c
        .call(
            POST,
            "/nets/validate",
            Some(json!({ "text": fixture("nets/valid/tiny_conv.prototxt") })),
            S::OK,
            "ValidateReport",
        )
        .await;
    let net_id = v["net_id"].as_str().unwrap().to_string();
    c.call(POST, "/nets/complete", Some(json!({ "text": "layer { ", "line": 1, "column": 9 })), S::OK, "Suggestions")
        .await;
    c.call(POST, &format!("/nets/{net_id}/deploy"), None, S::OK, "DeployResult").await;

    let t = c
        .call(
            POST,
            "/train",
            Some(json!({ "net_id": net_id, "solver_text": fixture("solvers/tiny.prototxt"), "dataset_id": train })),
            S::ACCEPTED,
            "TaskRecord",
        )
        .await;
    let trained = c.finish(&t, "TrainResult").await;
    let model = trained["model_id"].as_str().unwrap().to_string();
    c.call(GET, &format!("/models/{model}"), None, S::OK, "ModelSummary").await;
    c.call(GET, "/models", None, S::OK, "ModelList").await;

    let t = c
        .call(
            POST,
            "/experiments/extract",
            Some(json!({ "model_id": model, "dataset_id": test, "layers": ["pool1", "ip1"] })),
            S::ACCEPTED,
            "TaskRecord",
        )
        .await;
    let extracted = c.finish(&t, "ExtractResult").await;
    let features = extracted["features_ids"][0].as_str().unwrap().to_string();
    c.call(GET, &format!("/features/{features}/grid?sample=0"), None, S::OK, "Grid").await;

    let t = c
        .call(
            POST,
            "/experiments/test",
            Some(json!({ "model_id": model, "dataset_id": test })),
            S::ACCEPTED,
            "TaskRecord",
        )
        .await;
    c.finish(&t, "TestResult").await;
    let body =
        json!({ "model_id": model, "dataset_id": test, "classifier": { "layer": "ip1", "train_dataset_id": train } });
    let t = c.call(POST, "/experiments/test", Some(body), S::ACCEPTED, "TaskRecord").await;
    c.finish(&t, "TestResult").await;

    let out = c._dir.path().join("f.libsvm");
    let t = c
        .call(
            POST,
            &format!("/features/{features}/export"),
            Some(json!({ "path": out.to_str().unwrap() })),
            S::ACCEPTED,
            "TaskRecord",
        )
        .await;
    c.finish(&t, "ExportResult").await;

    c.call(GET, "/tasks", None, S::OK, "TaskList").await;
    let t = c.call(POST, "/tasks/0/cancel", None, S::NOT_FOUND, "ApiError").await;
    assert_eq!(t["code"], "not_found");
    let tasks = c.call(GET, "/tasks", None, S::OK, "TaskList").await;
    let first = tasks[0]["id"].as_str().unwrap().to_string();
    c.call(POST, &format!("/tasks/{first}/cancel"), None, S::OK, "CancelResult").await;
    c.call(GET, "/notifications?after=0&wait=0", None, S::OK, "FeedPage").await;

    c.call(POST, "/train", Some(json!({ "dataset_id": train })), S::BAD_REQUEST, "ApiError").await;
    c.call(GET, "/models/abc", None, S::NOT_FOUND, "ApiError").await;
    c.call(
        POST,
        "/train",
        Some(json!({ "net_text": fixture("nets/valid/mlp.prototxt"), "dataset_id": train })),
        S::CONFLICT,
        "ApiError",
    )
    .await;

    let used: std::collections::BTreeSet<&str> = c.checked.iter().map(String::as_str).collect();
    let published: Vec<String> = c.defs.as_object().unwrap().keys().cloned().collect();
    for name in &published {
        let is_part = c.defs[name].get("x-part-of").is_some();
        assert!(is_part || used.contains(name.as_str()), "schema {name} is never exercised");
    }
}
