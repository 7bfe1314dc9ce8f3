//! Turn a STEM concept into a validated definition, three candidate
//! analogies, a four-scene storyboard with component-coverage checks, and a
//! pan/zoom slideshow video. Text, image and caption models sit behind
//! pluggable backends; deterministic mocks make the whole pipeline run
//! offline.
//!
//! ```no_run
//! # async fn demo() -> Result<(), analogy_core::PipelineError> {
//! use analogy_core::{Concept, Engine, ServiceConfig, Subject};
//!
//! let engine = Engine::from_config(&ServiceConfig::default())?;
//! let session = engine.create_session(Concept::new("Newton's First Law", Subject::Physics, None)?)?;
//! engine.validate_concept(&session.id).await?;
//! let analogies = engine.generate_analogies(&session.id).await?;
//! engine.choose_analogy(&session.id, &analogies[0].id)?;
//! engine.run_storyboard_stage(&session.id).await?;
//! let video = engine.run_video_stage(&session.id).await?;
//! println!("video blob {}", video.hash);
//! # Ok(()) }
//! ```

pub mod config;
pub mod coverage;
pub mod engine;
pub mod error;
pub mod gateway;
pub mod ids;
pub mod jobs;
pub mod prompt;
pub mod session;
pub mod store;
pub mod storyboard;
pub mod video;

pub use config::{ConfigError, ServiceConfig};
pub use coverage::{ComponentChecklist, CoverageReport, CoverageTrail};
pub use engine::{Engine, EngineSettings, Stage};
pub use error::{ErrorClass, PipelineError};
pub use ids::{AnalogyId, JobId, SessionId};
pub use jobs::{GenerationJob, JobRegistry, ProgressEvent};
pub use session::{Analogy, Concept, DefinitionCheck, PipelineSession, SessionState, Subject};
pub use store::{BlobRef, FsStore, Store};
pub use storyboard::{Scene, SceneEdit, Storyboard};
pub use video::VideoManifest;
