//! Drives a running service over HTTP for `analogy run --api URL`.

use std::path::Path;
use std::time::Duration;

use analogy_core::jobs::{GenerationJob, JobStatus};
use analogy_core::{BlobRef, Concept, JobId, PipelineSession, SessionState};
use serde_json::{json, Value};

use crate::cli::{write_artifacts, Failure, EXIT_BACKEND, EXIT_NOT_FOUND, EXIT_STAGE, EXIT_USAGE};

pub struct RemoteClient {
    http: reqwest::Client,
    base: String,
}

impl RemoteClient {
    pub fn new(base: &str) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.trim_end_matches('/').to_string(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(&self, req: reqwest::RequestBuilder, stage: &str) -> Result<Value, Failure> {
        let resp = req
            .send()
            .await
            .map_err(|e| Failure::new(EXIT_BACKEND, format!("stage {stage}: {}", e.without_url())))?;
        let status = resp.status();
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        if status.is_success() {
            return Ok(body);
        }
        let message = body["error"].as_str().unwrap_or("request failed").to_string();
        let code = match status.as_u16() {
            404 => EXIT_NOT_FOUND,
            422 => EXIT_USAGE,
            502 => EXIT_BACKEND,
            _ => EXIT_STAGE,
        };
        Err(Failure::new(code, format!("stage {stage} failed ({status}): {message}")))
    }

    /// Starts a stage and polls its job until it finishes.
    async fn stage(&self, session: &str, stage: &str) -> Result<(), Failure> {
        let started = self
            .send(self.http.post(self.url(&format!("/sessions/{session}/{stage}"))), stage)
            .await?;
        let job: JobId = serde_json::from_value(started["job_id"].clone())
            .map_err(|e| Failure::new(EXIT_STAGE, format!("stage {stage}: bad job id: {e}")))?;
        loop {
            let v = self.send(self.http.get(self.url(&format!("/jobs/{job}"))), stage).await?;
            let job: GenerationJob = serde_json::from_value(v)
                .map_err(|e| Failure::new(EXIT_STAGE, format!("stage {stage}: {e}")))?;
            match job.status {
                JobStatus::Succeeded => return Ok(()),
                JobStatus::Failed => {
                    let msg = job.error.unwrap_or_default();
                    let code = if msg.contains("backend") { EXIT_BACKEND } else { EXIT_STAGE };
                    return Err(Failure::new(code, format!("stage {stage} failed: {msg}")));
                }
                _ => tokio::time::sleep(Duration::from_millis(100)).await,
            }
        }
    }

    async fn session(&self, id: &str) -> Result<PipelineSession, Failure> {
        let v = self.send(self.http.get(self.url(&format!("/sessions/{id}"))), "fetch").await?;
        serde_json::from_value(v).map_err(|e| Failure::new(EXIT_STAGE, format!("session document: {e}")))
    }

    async fn blob(&self, blob: &BlobRef) -> Result<Vec<u8>, String> {
        let resp = self
            .http
            .get(self.url(&format!("/blobs/{}", blob.hash)))
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| e.without_url().to_string())?;
        let bytes = resp.bytes().await.map_err(|e| e.without_url().to_string())?;
        if analogy_core::store::sha256_hex(&bytes) != blob.hash {
            return Err(format!("blob {} failed its integrity check", blob.hash));
        }
        Ok(bytes.to_vec())
    }

    pub async fn run(&self, concept: &Concept, choose: u8, out: &Path) -> Result<(), Failure> {
        let created = self
            .send(self.http.post(self.url("/sessions")).json(concept), "create")
            .await?;
        let id = created["id"].as_str().unwrap_or_default().to_string();
        eprintln!("session {id}");
        self.stage(&id, "validate").await?;
        if self.session(&id).await?.state == SessionState::Failed {
            return Err(Failure::new(EXIT_STAGE, "stage validate failed: not a STEM concept"));
        }
        self.stage(&id, "analogies").await?;
        let s = self.session(&id).await?;
        let analogies = s.analogies.unwrap_or_default();
        let chosen = analogies
            .get(choose as usize - 1)
            .ok_or_else(|| Failure::new(EXIT_STAGE, "service returned fewer than 3 analogies"))?;
        self.send(
            self.http
                .post(self.url(&format!("/sessions/{id}/choose")))
                .json(&json!({ "analogy_id": chosen.id })),
            "choose",
        )
        .await?;
        self.stage(&id, "storyboard").await?;
        self.stage(&id, "video").await?;
        let session = self.session(&id).await?;

        // Blobs are fetched up front because the writer's fetch is synchronous.
        let mut blobs = std::collections::HashMap::new();
        let board_blobs = session
            .storyboard
            .iter()
            .flat_map(|b| b.scenes.iter().filter_map(|s| s.image.clone()));
        for blob in board_blobs.chain(session.video.clone()) {
            let bytes = self.blob(&blob).await.map_err(|e| Failure::new(EXIT_BACKEND, e))?;
            blobs.insert(blob.hash.clone(), bytes);
        }
        write_artifacts(&session, out, |b| {
            blobs
                .get(&b.hash)
                .cloned()
                .ok_or_else(|| format!("blob {} not fetched", b.hash))
        })?;
        println!("{}", out.display());
        Ok(())
    }
}
