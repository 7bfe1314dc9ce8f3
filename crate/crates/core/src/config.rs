//! Service configuration: a TOML file plus environment overrides.
//!
//! ```toml
//! data_root = "./analogy-data"
//! port = 8080
//!
//! [backends.text]
//! kind = "live_text"
//! endpoint = "https://api.example.com/v1/chat/completions"
//! credential_ref = "ANALOGY_TEXT_KEY"
//!
//! [video]
//! segment_ms = 4000
//! ```
//!
//! Every table and key is optional. Unknown keys are rejected.

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coverage::DEFAULT_REPAIR_BUDGET;
use crate::gateway::{GatewayConfig, MockImageBehavior, ALLOWED_IMAGE_SIDES};
use crate::video::{EncoderConfig, TimingConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Seed for every mock text and image call.
    pub seed: u64,
    /// Fixture file replacing the bundled one.
    pub fixtures: Option<PathBuf>,
    pub image: MockImageBehavior,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fixtures: None,
            image: MockImageBehavior::reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Repair iterations per scene image after the first attempt.
    pub repair_budget: u32,
    pub image_width: u32,
    pub image_height: u32,
    /// Video renders allowed to run at once across sessions.
    pub render_parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            repair_budget: DEFAULT_REPAIR_BUDGET,
            image_width: 512,
            image_height: 512,
            render_parallelism: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    pub bind: IpAddr,
    pub port: u16,
    /// Allow any origin; meant for local UI development.
    pub cors_permissive: bool,
    pub backends: GatewayConfig,
    pub mock: MockConfig,
    pub pipeline: PipelineConfig,
    pub video: TimingConfig,
    pub encoder: EncoderConfig,
    /// Directory of template files replacing the bundled set.
    pub templates_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("./analogy-data"),
            bind: IpAddr::from([127, 0, 0, 1]),
            port: 8080,
            cors_permissive: false,
            backends: GatewayConfig::mock(),
            mock: MockConfig::default(),
            pipeline: PipelineConfig::default(),
            video: TimingConfig::default(),
            encoder: EncoderConfig::default(),
            templates_dir: None,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`, then applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// `ANALOGY_DATA_ROOT`, `ANALOGY_PORT` and `ANALOGY_BIND` override the file.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(root) = get("ANALOGY_DATA_ROOT") {
            self.data_root = PathBuf::from(root);
        }
        if let Some(port) = get("ANALOGY_PORT") {
            self.port = port
                .parse()
                .map_err(|_| invalid("ANALOGY_PORT", format!("{port:?} is not a port number")))?;
        }
        if let Some(bind) = get("ANALOGY_BIND") {
            self.bind = bind
                .parse()
                .map_err(|_| invalid("ANALOGY_BIND", format!("{bind:?} is not an IP address")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backends.validate().map_err(|m| {
            let (field, message) = m.split_once(": ").unwrap_or(("backends", &m));
            invalid(field, message)
        })?;
        for (field, side) in [
            ("pipeline.image_width", self.pipeline.image_width),
            ("pipeline.image_height", self.pipeline.image_height),
        ] {
            if !ALLOWED_IMAGE_SIDES.contains(&side) {
                return Err(invalid(field, format!("{side} is not one of {ALLOWED_IMAGE_SIDES:?}")));
            }
        }
        if self.pipeline.render_parallelism == 0 {
            return Err(invalid("pipeline.render_parallelism", "must be at least 1"));
        }
        let v = &self.video;
        if v.segment_ms == 0 {
            return Err(invalid("video.segment_ms", "must be positive"));
        }
        if v.fps == 0 {
            return Err(invalid("video.fps", "must be positive"));
        }
        if v.width % 2 == 1 || v.height % 2 == 1 || v.width < 16 || v.height < 16 {
            return Err(invalid("video.width", "resolution must be even and at least 16x16"));
        }
        let shortest = v
            .scene_ms
            .as_ref()
            .map_or(v.segment_ms, |ms| ms.iter().copied().min().unwrap_or(0));
        if v.transition_ms >= shortest {
            return Err(invalid("video.transition_ms", "must be shorter than every segment"));
        }
        if !v.start_rect.is_within_unit_square() {
            return Err(invalid("video.start_rect", "must lie within the unit square"));
        }
        if !v.end_rect.is_within_unit_square() {
            return Err(invalid("video.end_rect", "must lie within the unit square"));
        }
        Ok(())
    }

    /// True when every backend is a mock.
    pub fn all_mock(&self) -> bool {
        [&self.backends.text, &self.backends.image, &self.backends.caption]
            .iter()
            .all(|b| !b.kind.is_live())
    }
}
