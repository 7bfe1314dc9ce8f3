//! HTTP backends speaking chat-completions and image-generations style
//! contracts. Any provider exposing compatible endpoints works.

use std::sync::Arc;

use async_trait::async_trait;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{
    media_type_of, BackendConfig, BackendError, BackendKind, CaptionBackend, ImageBackend,
    ImageRequest, RawImage, TextBackend, TextRequest,
};
use crate::prompt::{CaptionPayload, TemplateId, TemplateSet};

struct HttpTarget {
    client: reqwest::Client,
    endpoint: String,
    credential_ref: String,
    model: Option<String>,
}

impl HttpTarget {
    fn new(cfg: &BackendConfig) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            credential_ref: cfg.credential_ref.clone().unwrap_or_default(),
            model: cfg.model.clone(),
        }
    }

    /// Posts `body` and returns the decoded JSON. Response bodies of failed
    /// calls are dropped so provider error text never leaks upward.
    async fn post(&self, body: Value) -> Result<Value, BackendError> {
        let secret = std::env::var(&self.credential_ref)
            .map_err(|_| BackendError::MissingCredential(self.credential_ref.clone()))?;
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(secret)
            .json(&body)
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Status(status.as_u16()));
        }
        resp.json::<Value>()
            .await
            .map_err(|e| BackendError::Decode(e.without_url().to_string()))
    }
}

fn message_content(v: &Value) -> Result<String, BackendError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Decode("missing choices[0].message.content".into()))
}

pub struct LiveTextBackend {
    target: HttpTarget,
}

impl LiveTextBackend {
    pub fn new(cfg: &BackendConfig) -> Self {
        Self {
            target: HttpTarget::new(cfg),
        }
    }
}

#[async_trait]
impl TextBackend for LiveTextBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LiveText
    }

    async fn complete(&self, req: &TextRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        if let Some(model) = &self.target.model {
            body["model"] = json!(model);
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        message_content(&self.target.post(body).await?)
    }
}

pub struct LiveImageBackend {
    target: HttpTarget,
    batch_size: u32,
}

impl LiveImageBackend {
    pub fn new(cfg: &BackendConfig) -> Self {
        Self {
            target: HttpTarget::new(cfg),
            batch_size: cfg.batch_size,
        }
    }
}

#[async_trait]
impl ImageBackend for LiveImageBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LiveImage
    }

    async fn generate(&self, req: &ImageRequest) -> Result<RawImage, BackendError> {
        let mut body = json!({
            "prompt": req.prompt,
            "n": self.batch_size,
            "size": format!("{}x{}", req.width, req.height),
            "response_format": "b64_json",
        });
        if let Some(model) = &self.target.model {
            body["model"] = json!(model);
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let v = self.target.post(body).await?;
        let b64 = v
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Decode("missing data[0].b64_json".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(RawImage {
            media_type: media_type_of(&bytes).to_string(),
            bytes,
        })
    }
}

pub struct LiveCaptionBackend {
    target: HttpTarget,
    templates: Arc<TemplateSet>,
}

impl LiveCaptionBackend {
    pub fn new(cfg: &BackendConfig, templates: Arc<TemplateSet>) -> Self {
        Self {
            target: HttpTarget::new(cfg),
            templates,
        }
    }
}

#[async_trait]
impl CaptionBackend for LiveCaptionBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LiveCaption
    }

    async fn caption(&self, image: &[u8]) -> Result<String, BackendError> {
        let instruction = self
            .templates
            .render(TemplateId::CaptionProbe, &Default::default())
            .map_err(|e| BackendError::Decode(e.to_string()))?;
        let data_url = format!(
            "data:{};base64,{}",
            media_type_of(image),
            base64::engine::general_purpose::STANDARD.encode(image)
        );
        let mut body = json!({
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": instruction},
                    {"type": "image_url", "image_url": {"url": data_url}}
                ]
            }],
            "max_tokens": 300,
        });
        if let Some(model) = &self.target.model {
            body["model"] = json!(model);
        }
        let content = message_content(&self.target.post(body).await?)?;
        // Models that ignore the JSON instruction still yield a usable caption.
        Ok(self
            .templates
            .parse(TemplateId::CaptionProbe, &content)
            .and_then(|p| p.decode::<CaptionPayload>())
            .map(|p| p.caption)
            .unwrap_or(content))
    }
}
