#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use metabokg_core::scenarios::Scenario;
use metabokg_core::setup::RuntimeSettings;
use metabokg_service::{build_state, router, AppState, ServiceConfig};
use tower::ServiceExt;

pub struct TestApp {
    pub state: AppState,
    pub router: Router,
    pub root: PathBuf,
    _dir: tempfile::TempDir,
}

pub fn config(root: &Path, s: &Scenario) -> ServiceConfig {
    ServiceConfig {
        artifact_root: root.to_path_buf(),
        runtime: RuntimeSettings { cassette: Some(s.cassette_path()), ..Default::default() },
        ..Default::default()
    }
}

pub fn app_with(s: &Scenario, edit: impl FnOnce(&mut ServiceConfig)) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sessions");
    let mut cfg = config(&root, s);
    edit(&mut cfg);
    let state = build_state(&cfg).unwrap();
    TestApp { router: router(state.clone()), state, root, _dir: dir }
}

pub fn app(s: &Scenario) -> TestApp {
    app_with(s, |_| {})
}

pub async fn send(router: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = router.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

pub fn post_json(uri: &str, body: serde_json::Value) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub async fn create(router: &Router) -> String {
    let (status, body) = send(router, Request::post("/sessions").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    serde_json::from_slice::<serde_json::Value>(&body).unwrap()["session_id"].as_str().unwrap().to_owned()
}

pub async fn ask(router: &Router, id: &str, text: &str) -> metabokg_service::TurnReply {
    let (status, body) = send(router, post_json(&format!("/sessions/{id}/messages"), serde_json::json!({"text": text}))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}
