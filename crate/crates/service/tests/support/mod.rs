//! An in-process server with mock backends and a small HTTP client for it.

#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use analogy_core::video::TimingConfig;
use analogy_core::{Engine, ServiceConfig};
use serde_json::{json, Value};

pub struct Server {
    pub base: String,
    pub http: reqwest::Client,
    _data: tempfile::TempDir,
}

/// Mock backends, keyframe fallback and a small frame size keep runs fast.
pub fn test_config(data_root: &std::path::Path) -> ServiceConfig {
    let mut cfg = ServiceConfig {
        data_root: data_root.to_path_buf(),
        ..ServiceConfig::default()
    };
    cfg.encoder.force_fallback = true;
    cfg.video = TimingConfig {
        width: 64,
        height: 36,
        ..TimingConfig::default()
    };
    cfg
}

pub async fn spawn_with(tweak: impl FnOnce(&mut ServiceConfig)) -> Server {
    let data = tempfile::tempdir().unwrap();
    let mut cfg = test_config(data.path());
    tweak(&mut cfg);
    let engine = Arc::new(Engine::from_config(&cfg).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, analogy_service::api::router(engine, false)).await });
    Server {
        base,
        http: reqwest::Client::new(),
        _data: data,
    }
}

pub async fn spawn() -> Server {
    spawn_with(|_| {}).await
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: Option<Value>) -> (u16, Value) {
        let mut req = self.http.post(self.url(path));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let r = req.send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
    }

    pub async fn patch(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.patch(self.url(path)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
    }

    pub async fn create(&self, name: &str) -> String {
        let (code, s) = self
            .post("/sessions", Some(json!({ "name": name, "subject": "physics" })))
            .await;
        assert_eq!(code, 201, "{s}");
        s["id"].as_str().unwrap().to_string()
    }

    /// Polls a job until it leaves queued/running.
    pub async fn wait(&self, job: &str) -> Value {
        for _ in 0..1_200 {
            let (_, v) = self.get(&format!("/jobs/{job}")).await;
            if v["status"] != "running" && v["status"] != "queued" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        panic!("job {job} never finished");
    }

    /// Starts a stage, expects 202, and waits for the job.
    pub async fn stage(&self, id: &str, path: &str) -> Value {
        let (code, started) = self.post(&format!("/sessions/{id}/{path}"), None).await;
        assert_eq!(code, 202, "{path}: {started}");
        self.wait(started["job_id"].as_str().unwrap()).await
    }

    /// Reads a job's SSE stream to its end: (event name, data) pairs.
    pub async fn events(&self, job: &str) -> Vec<(String, Value)> {
        let mut resp = self.http.get(self.url(&format!("/jobs/{job}/events"))).send().await.unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        let mut text = String::new();
        let read = async {
            while let Some(chunk) = resp.chunk().await.unwrap() {
                text.push_str(&String::from_utf8_lossy(&chunk));
            }
        };
        tokio::time::timeout(Duration::from_secs(60), read)
            .await
            .expect("event stream did not close");
        parse_sse(&text)
    }

    /// Walks a fresh session to video_ready and returns its id.
    pub async fn happy_path(&self, name: &str) -> String {
        let id = self.create(name).await;
        for stage in ["validate", "analogies"] {
            let job = self.stage(&id, stage).await;
            assert_eq!(job["status"], "succeeded", "{stage}: {job}");
        }
        let (_, s) = self.get(&format!("/sessions/{id}")).await;
        assert_eq!(s["analogies"].as_array().unwrap().len(), 3);
        let (code, s) = self
            .post(&format!("/sessions/{id}/choose"), Some(json!({ "analogy_id": s["analogies"][0]["id"] })))
            .await;
        assert_eq!((code, s["state"].as_str()), (200, Some("analogy_chosen")), "{s}");
        for stage in ["storyboard", "video"] {
            let job = self.stage(&id, stage).await;
            assert_eq!(job["status"], "succeeded", "{stage}: {job}");
        }
        id
    }
}

/// Splits an SSE body into (event, JSON data) pairs; keep-alive comments are skipped.
pub fn parse_sse(text: &str) -> Vec<(String, Value)> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut event = String::from("message");
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            (!data.is_empty()).then(|| (event, serde_json::from_str(&data).unwrap()))
        })
        .collect()
}
