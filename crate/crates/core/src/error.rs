use crate::coverage::CoverageError;
use crate::gateway::GatewayError;
use crate::ids::{JobId, SessionId};
use crate::prompt::{PromptError, QualityReport};
use crate::session::{ConceptError, IllegalTransition, SessionState};
use crate::store::StoreError;
use crate::video::VideoError;

/// Everything a pipeline operation can fail with.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid concept: {0}")]
    Concept(#[from] ConceptError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("session {0} not found")]
    SessionNotFound(SessionId),
    #[error("job {0} not found")]
    JobNotFound(JobId),
    #[error("session is in state {state}; {operation} requires {expected}")]
    WrongState {
        state: SessionState,
        operation: &'static str,
        expected: &'static str,
    },
    #[error("session {0} is busy with another stage")]
    Busy(SessionId),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("storyboard must have exactly 4 scenes, backend produced {0}")]
    SceneCount(usize),
    #[error("analogies are not distinct after retries: {0:?}")]
    NotDistinct(QualityReport),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Video(#[from] VideoError),
}

/// Coarse classification shared by the HTTP status mapping and CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    Conflict,
    Validation,
    Backend,
    Stage,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::SessionNotFound(_) | Self::JobNotFound(_) => ErrorClass::NotFound,
            Self::Store(StoreError::SessionNotFound(_) | StoreError::BlobNotFound(_)) => {
                ErrorClass::NotFound
            }
            Self::WrongState { .. } | Self::Busy(_) | Self::Transition(_) => ErrorClass::Conflict,
            Self::Concept(_) | Self::Invalid(_) | Self::Precondition(_) => ErrorClass::Validation,
            Self::Gateway(_) => ErrorClass::Backend,
            Self::Prompt(_)
            | Self::SceneCount(_)
            | Self::NotDistinct(_)
            | Self::Coverage(_)
            | Self::Store(_)
            | Self::Video(_) => ErrorClass::Stage,
        }
    }
}
