//! Background stage jobs and their progress streams.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::ids::{JobId, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Validate,
    Analogies,
    Storyboard,
    SceneImage,
    Video,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Validate => "validate",
            Self::Analogies => "analogies",
            Self::Storyboard => "storyboard",
            Self::SceneImage => "scene_image",
            Self::Video => "video",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub timestamp: DateTime<Utc>,
    pub stage_label: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub id: JobId,
    pub session_id: SessionId,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress_events: Vec<ProgressRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One item of a job's event stream. Exactly one event per job has
/// `terminal` set, and it is the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub job_id: JobId,
    pub stage_label: String,
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub terminal: bool,
}

struct Entry {
    job: GenerationJob,
    events: Vec<ProgressEvent>,
    tx: broadcast::Sender<ProgressEvent>,
}

/// In-memory job table shared by the engine and the API.
#[derive(Default)]
pub struct JobRegistry {
    jobs: Mutex<HashMap<JobId, Entry>>,
}

/// A job's recorded events plus, while it is still running, a receiver for
/// the rest.
pub struct Subscription {
    pub history: Vec<ProgressEvent>,
    pub live: Option<broadcast::Receiver<ProgressEvent>>,
}

impl JobRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Registers a queued job. Dropping the handle without finishing it
    /// fails the job, so every job reaches a terminal event.
    pub fn create(self: &Arc<Self>, session_id: SessionId, kind: JobKind) -> JobHandle {
        let id = JobId::random();
        let (tx, _) = broadcast::channel(256);
        let job = GenerationJob {
            id: id.clone(),
            session_id,
            kind,
            status: JobStatus::Queued,
            progress_events: Vec::new(),
            error: None,
        };
        self.jobs.lock().unwrap().insert(
            id.clone(),
            Entry {
                job,
                events: Vec::new(),
                tx,
            },
        );
        JobHandle {
            registry: self.clone(),
            id,
            finished: std::sync::atomic::AtomicBool::new(false),
        }
    }

    pub fn get(&self, id: &JobId) -> Option<GenerationJob> {
        self.jobs.lock().unwrap().get(id).map(|e| e.job.clone())
    }

    pub fn subscribe(&self, id: &JobId) -> Option<Subscription> {
        let jobs = self.jobs.lock().unwrap();
        let e = jobs.get(id)?;
        Some(Subscription {
            history: e.events.clone(),
            live: (!e.job.status.is_terminal()).then(|| e.tx.subscribe()),
        })
    }

    fn record(&self, id: &JobId, label: &str, fraction: f64, message: Option<String>, end: Option<JobStatus>) {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(e) = jobs.get_mut(id) else { return };
        if e.job.status.is_terminal() {
            return;
        }
        let last = e.job.progress_events.last().map_or(0.0, |p| p.fraction);
        let fraction = if fraction.is_finite() { fraction.clamp(0.0, 1.0) } else { 0.0 }.max(last);
        e.job.status = end.unwrap_or(JobStatus::Running);
        if end == Some(JobStatus::Failed) {
            e.job.error = message.clone();
        }
        e.job.progress_events.push(ProgressRecord {
            timestamp: Utc::now(),
            stage_label: label.to_string(),
            fraction,
        });
        let event = ProgressEvent {
            job_id: id.clone(),
            stage_label: label.to_string(),
            fraction,
            message,
            terminal: end.is_some(),
        };
        e.events.push(event.clone());
        let _ = e.tx.send(event);
    }
}

/// Write side of one job.
pub struct JobHandle {
    registry: Arc<JobRegistry>,
    id: JobId,
    finished: std::sync::atomic::AtomicBool,
}

impl JobHandle {
    pub fn id(&self) -> &JobId {
        &self.id
    }

    /// Records progress; fractions below an earlier one are raised to it.
    pub fn progress(&self, label: &str, fraction: f64) {
        self.registry.record(&self.id, label, fraction, None, None);
    }

    pub fn succeed(&self, message: Option<String>) {
        self.finish(JobStatus::Succeeded, "done", message);
    }

    pub fn fail(&self, message: String) {
        self.finish(JobStatus::Failed, "failed", Some(message));
    }

    fn finish(&self, status: JobStatus, label: &str, message: Option<String>) {
        if !self.finished.swap(true, std::sync::atomic::Ordering::SeqCst) {
            let fraction = if status == JobStatus::Succeeded { 1.0 } else { 0.0 };
            self.registry.record(&self.id, label, fraction, message, Some(status));
        }
    }
}

impl Drop for JobHandle {
    fn drop(&mut self) {
        self.finish(JobStatus::Failed, "failed", Some("job aborted".into()));
    }
}
