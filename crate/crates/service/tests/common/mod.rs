#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fedfeed_core::pipeline::{self, ClientAssignment};
use fedfeed_core::storage::{self, IngestPaths};
use fedfeed_core::{Config, Snapshot, Store};
use fedfeed_service::AppState;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const INGEST_NOW: i64 = 1_800_000_000;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_config() -> Config {
    Config::load(&fixtures().join("fedfeed.toml")).unwrap()
}

pub fn fixture_snapshot() -> Snapshot {
    let dir = fixtures().join("corpus");
    let paths = IngestPaths {
        users: dir.join("users.jsonl"),
        posts: dir.join("posts.jsonl"),
        interactions: dir.join("interactions.jsonl"),
    };
    storage::ingest(&paths, None, INGEST_NOW).unwrap()
}

pub fn trained_fixture() -> Snapshot {
    let cfg = fixture_config();
    let mut snap = fixture_snapshot();
    let out = pipeline::train_on_snapshot(&snap, &cfg.train, ClientAssignment::ByUser).unwrap();
    let acc = out.reports.last().map(|r| r.eval_acc);
    snap.swap_model(out.params, out.reports.len() as u64, acc).unwrap();
    snap
}

pub fn app_state(snap: Snapshot, state_path: Option<&Path>) -> AppState {
    AppState::new(Arc::new(Store::new(snap)), fixture_config(), state_path.map(Path::to_path_buf)).unwrap()
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Vec<u8>,
    pub headers: axum::http::HeaderMap,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("not JSON ({e}): {:?}", String::from_utf8_lossy(&self.bytes)))
    }

    /// Asserts the status and that the body is exactly one ApiError with `code`.
    pub fn assert_error(&self, status: u16, code: &str) {
        assert_eq!(self.status.as_u16(), status, "{}", String::from_utf8_lossy(&self.bytes));
        let body: fedfeed_core::api::ApiError = serde_json::from_slice(&self.bytes).unwrap();
        assert_eq!(serde_json::to_value(body.code).unwrap(), code);
        assert!(!body.message.is_empty());
    }
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, bytes, headers }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, "GET", uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    send(app, "POST", uri, Some(&body.to_string())).await
}
