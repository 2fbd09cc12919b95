//! Helpers for driving a service in tests. Also included by path from the
//! acceptance suite.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pkgtrace_service::{JobState, Store};
use tower::ServiceExt;

pub fn solana_bundle_dir() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/fixtures/bundles/solana-style"
    ))
}

pub fn empty_bundle_dir() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/fixtures/bundles/empty"
    ))
}

pub fn tar_gz(dir: &Path) -> Vec<u8> {
    let mut tar = tar::Builder::new(flate2::write::GzEncoder::new(
        Vec::new(),
        flate2::Compression::default(),
    ));
    tar.append_dir_all("bundle", dir).unwrap();
    tar.into_inner().unwrap().finish().unwrap()
}

pub const BOUNDARY: &str = "pkgtrace-test-boundary-7d1f";

pub enum Part<'a> {
    Text(&'a str, &'a str),
    File(&'a str, &'a str, &'a [u8]),
}

pub fn multipart(parts: &[Part]) -> Vec<u8> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match p {
            Part::Text(name, value) => {
                body.extend_from_slice(
                    format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n")
                        .as_bytes(),
                );
            }
            Part::File(name, file, data) => {
                body.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{name}\"; filename=\"{file}\"\r\n\
                         Content-Type: application/octet-stream\r\n\r\n"
                    )
                    .as_bytes(),
                );
                body.extend_from_slice(data);
                body.extend_from_slice(b"\r\n");
            }
        }
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

pub async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    content_type: Option<&str>,
    body: Vec<u8>,
) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(ct) = content_type {
        req = req.header("content-type", ct);
    }
    let resp = app
        .clone()
        .oneshot(req.body(Body::from(body)).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    Reply { status, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, Vec::new()).await
}

pub async fn submit(app: &Router, parts: &[Part<'_>]) -> Reply {
    let ct = format!("multipart/form-data; boundary={BOUNDARY}");
    call(
        app,
        Method::POST,
        "/api/v1/jobs",
        Some(&ct),
        multipart(parts),
    )
    .await
}

pub async fn put_rules(app: &Router, source: &str) -> Reply {
    call(
        app,
        Method::PUT,
        "/api/v1/rules",
        Some("text/plain"),
        source.as_bytes().to_vec(),
    )
    .await
}

/// Poll until every job is terminal or the deadline passes.
pub fn wait_terminal(store: &Store, ids: &[String], within: Duration) -> bool {
    let deadline = Instant::now() + within;
    loop {
        let done = ids.iter().all(|id| {
            store
                .load_job(id)
                .map(|j| j.state.is_terminal())
                .unwrap_or(false)
        });
        if done {
            return true;
        }
        if Instant::now() > deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub fn states(store: &Store, ids: &[String]) -> Vec<JobState> {
    ids.iter()
        .map(|id| store.load_job(id).unwrap().state)
        .collect()
}
