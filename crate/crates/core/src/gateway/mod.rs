//! Uniform access to text, image and caption backends.
//!
//! Every call goes through the same policy: request validation, an in-flight
//! limiter per backend, a per-attempt timeout, and exponential backoff on
//! transport failures, HTTP 429 and 5xx. Other 4xx responses fail at once.

mod live;
pub mod mock;
pub mod placard;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use live::{LiveCaptionBackend, LiveImageBackend, LiveTextBackend};
pub use mock::{MockCaptionBackend, MockImageBackend, MockImageBehavior, MockTextBackend};

use crate::prompt::TemplateSet;

pub const ALLOWED_IMAGE_SIDES: [u32; 3] = [512, 768, 1024];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    pub seed: Option<u64>,
}

impl TextRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: 1200,
            temperature: 0.7,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside 0.0..=2.0",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
}

impl ImageRequest {
    fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        for side in [self.width, self.height] {
            if !ALLOWED_IMAGE_SIDES.contains(&side) {
                return Err(GatewayError::InvalidRequest(format!(
                    "image dimension {side} not in {ALLOWED_IMAGE_SIDES:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
    /// Present for images drawn by the mock backend.
    pub sidecar: Option<placard::Sidecar>,
    pub attempts: u32,
}

/// Failure of a single backend attempt, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("timed out")]
    Timeout,
    #[error("undecodable response: {0}")]
    Decode(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{backend} backend timed out")]
    Timeout { backend: &'static str },
    #[error("{backend} backend rejected credentials (HTTP {status})")]
    Auth { backend: &'static str, status: u16 },
    #[error("{backend} backend rejected the request (HTTP {status})")]
    Rejected { backend: &'static str, status: u16 },
    #[error("{backend} backend failed after {attempts} attempts: {last}")]
    ExhaustedRetries {
        backend: &'static str,
        attempts: u32,
        last: String,
    },
    #[error("{backend} backend returned an undecodable response: {detail}")]
    Decode { backend: &'static str, detail: String },
    #[error("{backend} backend is not configured: {detail}")]
    Configuration { backend: &'static str, detail: String },
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
}

#[async_trait]
pub trait TextBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    async fn complete(&self, req: &TextRequest) -> Result<String, BackendError>;
}

#[async_trait]
pub trait ImageBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    async fn generate(&self, req: &ImageRequest) -> Result<RawImage, BackendError>;
}

#[async_trait]
pub trait CaptionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    async fn caption(&self, image: &[u8]) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LiveText,
    LiveImage,
    LiveCaption,
    MockText,
    MockImage,
    MockCaption,
}

impl BackendKind {
    pub fn is_live(self) -> bool {
        matches!(self, Self::LiveText | Self::LiveImage | Self::LiveCaption)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LiveText => "live_text",
            Self::LiveImage => "live_image",
            Self::LiveCaption => "live_caption",
            Self::MockText => "mock_text",
            Self::MockImage => "mock_image",
            Self::MockCaption => "mock_caption",
        }
    }
}

/// Backend configuration as it appears in the service config file.
///
/// `credential_ref` names an environment variable; the secret itself is only
/// read at request time and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub credential_ref: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Candidates requested per image call; the first is used.
    #[serde(default = "default_batch_size")]
    pub batch_size: u32,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    4
}
fn default_batch_size() -> u32 {
    1
}

impl BackendConfig {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            credential_ref: None,
            model: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            max_in_flight: default_max_in_flight(),
            batch_size: default_batch_size(),
        }
    }

    pub fn live(kind: BackendKind, endpoint: &str, credential_ref: &str) -> Self {
        Self {
            endpoint: Some(endpoint.to_string()),
            credential_ref: Some(credential_ref.to_string()),
            ..Self::mock(kind)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let has_endpoint = self.endpoint.is_some();
        let has_credential = self.credential_ref.is_some();
        if self.kind.is_live() {
            if !has_endpoint || !has_credential {
                return Err(format!(
                    "{} requires both endpoint and credential_ref",
                    self.kind.as_str()
                ));
            }
            let endpoint = self.endpoint.as_deref().unwrap_or_default();
            reqwest::Url::parse(endpoint)
                .map_err(|e| format!("endpoint `{endpoint}` is not a URL: {e}"))?;
        } else if has_endpoint || has_credential {
            return Err(format!(
                "{} must not set endpoint or credential_ref",
                self.kind.as_str()
            ));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            timeout: Duration::from_millis(self.timeout_ms),
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl RetryPolicy {
    /// Delay before retry `n` (1-based): `base * 2^(n-1)`, saturating.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.backoff_base.saturating_mul(factor)
    }

    pub fn schedule(&self) -> Vec<Duration> {
        (1..=self.max_retries).map(|n| self.backoff(n)).collect()
    }
}

enum Disposition {
    Retry,
    Fail(GatewayError),
}

fn classify(backend: &'static str, err: &BackendError) -> Disposition {
    match err {
        BackendError::Transport(_) => Disposition::Retry,
        BackendError::Status(429) => Disposition::Retry,
        BackendError::Status(s) if *s >= 500 => Disposition::Retry,
        BackendError::Status(s @ (401 | 403)) => {
            Disposition::Fail(GatewayError::Auth { backend, status: *s })
        }
        BackendError::Status(s) => Disposition::Fail(GatewayError::Rejected { backend, status: *s }),
        BackendError::Timeout => Disposition::Fail(GatewayError::Timeout { backend }),
        BackendError::Decode(d) => Disposition::Fail(GatewayError::Decode {
            backend,
            detail: d.clone(),
        }),
        BackendError::MissingCredential(var) => Disposition::Fail(GatewayError::Configuration {
            backend,
            detail: format!("environment variable {var} is not set"),
        }),
    }
}

struct Slot<B: ?Sized> {
    backend: Arc<B>,
    policy: RetryPolicy,
    limiter: Arc<Semaphore>,
}

impl<B: ?Sized> Slot<B> {
    fn new(backend: Arc<B>, policy: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            backend,
            policy,
            limiter: Arc::new(Semaphore::new(max_in_flight.max(1))),
        }
    }

    async fn call<T, F, Fut>(&self, name: &'static str, mut f: F) -> Result<(T, u32), GatewayError>
    where
        F: FnMut(Arc<B>) -> Fut,
        Fut: std::future::Future<Output = Result<T, BackendError>>,
    {
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("limiter semaphore is never closed");
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = match tokio::time::timeout(self.policy.timeout, f(self.backend.clone())).await
            {
                Ok(r) => r,
                Err(_) => Err(BackendError::Timeout),
            };
            let err = match outcome {
                Ok(v) => return Ok((v, attempts)),
                Err(e) => e,
            };
            match classify(name, &err) {
                Disposition::Fail(e) => return Err(e),
                Disposition::Retry if attempts > self.policy.max_retries => {
                    return Err(GatewayError::ExhaustedRetries {
                        backend: name,
                        attempts,
                        last: err.to_string(),
                    })
                }
                Disposition::Retry => {
                    let delay = self.policy.backoff(attempts);
                    tracing::debug!(backend = name, attempts, ?delay, error = %err, "retrying");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }
}

/// The three backends plus their call policies.
pub struct Gateway {
    text: Slot<dyn TextBackend>,
    image: Slot<dyn ImageBackend>,
    caption: Slot<dyn CaptionBackend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub text: BackendConfig,
    pub image: BackendConfig,
    pub caption: BackendConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self::mock()
    }
}

impl GatewayConfig {
    pub fn mock() -> Self {
        Self {
            text: BackendConfig::mock(BackendKind::MockText),
            image: BackendConfig::mock(BackendKind::MockImage),
            caption: BackendConfig::mock(BackendKind::MockCaption),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let slots = [
            ("text", &self.text, [BackendKind::LiveText, BackendKind::MockText]),
            ("image", &self.image, [BackendKind::LiveImage, BackendKind::MockImage]),
            ("caption", &self.caption, [BackendKind::LiveCaption, BackendKind::MockCaption]),
        ];
        for (slot, cfg, allowed) in slots {
            if !allowed.contains(&cfg.kind) {
                return Err(format!(
                    "backends.{slot}: kind {} cannot serve this slot",
                    cfg.kind.as_str()
                ));
            }
            cfg.validate().map_err(|e| format!("backends.{slot}: {e}"))?;
        }
        Ok(())
    }
}

impl Gateway {
    /// Assembles a gateway from explicit backends.
    pub fn new(
        text: (Arc<dyn TextBackend>, &BackendConfig),
        image: (Arc<dyn ImageBackend>, &BackendConfig),
        caption: (Arc<dyn CaptionBackend>, &BackendConfig),
    ) -> Self {
        Self {
            text: Slot::new(text.0, text.1.policy(), text.1.max_in_flight),
            image: Slot::new(image.0, image.1.policy(), image.1.max_in_flight),
            caption: Slot::new(caption.0, caption.1.policy(), caption.1.max_in_flight),
        }
    }

    /// Builds the configured backends. Mock backends take their fixtures and
    /// image behavior from `mock`.
    pub fn from_config(
        cfg: &GatewayConfig,
        mock: &mock::MockSettings,
        templates: Arc<TemplateSet>,
    ) -> Result<Self, GatewayError> {
        cfg.validate().map_err(|detail| GatewayError::Configuration {
            backend: "gateway",
            detail,
        })?;
        let text: Arc<dyn TextBackend> = match cfg.text.kind {
            BackendKind::MockText => Arc::new(MockTextBackend::new(mock.fixtures.clone())),
            _ => Arc::new(LiveTextBackend::new(&cfg.text)),
        };
        let image: Arc<dyn ImageBackend> = match cfg.image.kind {
            BackendKind::MockImage => Arc::new(MockImageBackend::new(mock.image.clone())),
            _ => Arc::new(LiveImageBackend::new(&cfg.image)),
        };
        let caption: Arc<dyn CaptionBackend> = match cfg.caption.kind {
            BackendKind::MockCaption => Arc::new(MockCaptionBackend),
            _ => Arc::new(LiveCaptionBackend::new(&cfg.caption, templates)),
        };
        Ok(Self::new(
            (text, &cfg.text),
            (image, &cfg.image),
            (caption, &cfg.caption),
        ))
    }

    pub fn kinds(&self) -> [BackendKind; 3] {
        [
            self.text.backend.kind(),
            self.image.backend.kind(),
            self.caption.backend.kind(),
        ]
    }

    pub async fn complete_text(&self, req: &TextRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let (text, attempts) = self
            .text
            .call("text", |b| {
                let req = req.clone();
                async move { b.complete(&req).await }
            })
            .await?;
        Ok(Completion { text, attempts })
    }

    pub async fn generate_image(&self, req: &ImageRequest) -> Result<GeneratedImage, GatewayError> {
        req.validate()?;
        let (raw, attempts) = self
            .image
            .call("image", |b| {
                let req = req.clone();
                async move { b.generate(&req).await }
            })
            .await?;
        let (width, height) = image_dimensions(&raw.bytes).map_err(|detail| GatewayError::Decode {
            backend: "image",
            detail,
        })?;
        Ok(GeneratedImage {
            sidecar: placard::read_sidecar(&raw.bytes),
            bytes: raw.bytes,
            media_type: raw.media_type,
            width,
            height,
            seed: req.seed,
            attempts,
        })
    }

    pub async fn caption_image(&self, image: &[u8]) -> Result<String, GatewayError> {
        image_dimensions(image).map_err(GatewayError::UndecodableImage)?;
        let bytes = Arc::new(image.to_vec());
        let (caption, _) = self
            .caption
            .call("caption", |b| {
                let bytes = bytes.clone();
                async move { b.caption(&bytes).await }
            })
            .await?;
        Ok(caption)
    }
}

/// Reads image dimensions from the header without decoding pixel data.
pub fn image_dimensions(bytes: &[u8]) -> Result<(u32, u32), String> {
    if bytes.is_empty() {
        return Err("empty image".into());
    }
    image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map_err(|e| e.to_string())
}

pub fn media_type_of(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "image/png",
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        Ok(image::ImageFormat::WebP) => "image/webp",
        _ => "application/octet-stream",
    }
}
