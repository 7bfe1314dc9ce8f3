//! Starts the HTTP API with mock backends on an ephemeral port and walks one
//! session from concept to video over plain HTTP, streaming the progress
//! events of the storyboard job.
//!
//! cargo run -p analogy-service --example serve_mock

use std::sync::Arc;
use std::time::Duration;

use analogy_core::{Engine, ServiceConfig};
use serde_json::{json, Value};

async fn wait(http: &reqwest::Client, base: &str, started: &Value) -> Result<Value, reqwest::Error> {
    let job = started["job_id"].as_str().unwrap_or_default();
    loop {
        let v: Value = http.get(format!("{base}/jobs/{job}")).send().await?.json().await?;
        if v["status"] != "running" && v["status"] != "queued" {
            return Ok(v);
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let cfg = ServiceConfig {
        data_root: data.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let engine = Arc::new(Engine::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move {
        axum::serve(listener, analogy_service::api::router(engine, true)).await
    });
    println!("serving on {base}");

    let http = reqwest::Client::new();
    let health: Value = http.get(format!("{base}/health")).send().await?.json().await?;
    println!("health: {health}");

    let session: Value = http
        .post(format!("{base}/sessions"))
        .json(&json!({ "name": "Newton's First Law", "subject": "physics" }))
        .send()
        .await?
        .json()
        .await?;
    let id = session["id"].as_str().unwrap_or_default().to_string();
    println!("session {id}");

    for stage in ["validate", "analogies"] {
        let started: Value = http.post(format!("{base}/sessions/{id}/{stage}")).send().await?.json().await?;
        println!("{stage}: {}", wait(&http, &base, &started).await?["status"]);
    }

    let s: Value = http.get(format!("{base}/sessions/{id}")).send().await?.json().await?;
    let first = &s["analogies"][0];
    println!("choosing {}", first["title"]);
    http.post(format!("{base}/sessions/{id}/choose"))
        .json(&json!({ "analogy_id": first["id"] }))
        .send()
        .await?
        .error_for_status()?;

    let started: Value = http.post(format!("{base}/sessions/{id}/storyboard")).send().await?.json().await?;
    let job = started["job_id"].as_str().unwrap_or_default();
    let mut events = http.get(format!("{base}/jobs/{job}/events")).send().await?;
    let mut text = String::new();
    while let Some(chunk) = events.chunk().await? {
        text.push_str(&String::from_utf8_lossy(&chunk));
        if text.contains("event: terminal") && text.ends_with("\n\n") {
            break;
        }
    }
    for line in text.lines().filter(|l| l.starts_with("data:")) {
        println!("  {line}");
    }

    let started: Value = http.post(format!("{base}/sessions/{id}/video")).send().await?.json().await?;
    println!("video: {}", wait(&http, &base, &started).await?["status"]);
    let s: Value = http.get(format!("{base}/sessions/{id}")).send().await?.json().await?;
    println!("state {} video {}", s["state"], s["video"]["media_type"]);
    Ok(())
}
