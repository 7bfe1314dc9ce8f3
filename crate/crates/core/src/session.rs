//! Session domain types and the state machine that governs them.

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{AnalogyId, SessionId};
use crate::store::BlobRef;
use crate::storyboard::{Storyboard, SCENE_COUNT};

pub const MAX_CONCEPT_CHARS: usize = 200;
pub const ANALOGY_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConceptError {
    #[error("concept name is empty")]
    Empty,
    #[error("concept name has {0} characters, limit is {MAX_CONCEPT_CHARS}")]
    TooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Math,
    Physics,
    Programming,
    #[default]
    Other,
}

impl Subject {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Math => "math",
            Self::Physics => "physics",
            Self::Programming => "programming",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerLevel {
    Novice,
    Intermediate,
    Advanced,
}

impl LearnerLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Novice => "novice",
            Self::Intermediate => "intermediate",
            Self::Advanced => "advanced",
        }
    }
}

/// The STEM concept a session is built around.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConcept")]
pub struct Concept {
    name: String,
    pub subject: Subject,
    pub learner_level: Option<LearnerLevel>,
}

#[derive(Deserialize)]
struct RawConcept {
    name: String,
    #[serde(default)]
    subject: Subject,
    #[serde(default)]
    learner_level: Option<LearnerLevel>,
}

impl TryFrom<RawConcept> for Concept {
    type Error = ConceptError;

    fn try_from(raw: RawConcept) -> Result<Self, Self::Error> {
        Concept::new(&raw.name, raw.subject, raw.learner_level)
    }
}

impl Concept {
    /// Trims `name` and checks it holds 1 to 200 characters.
    pub fn new(
        name: &str,
        subject: Subject,
        learner_level: Option<LearnerLevel>,
    ) -> Result<Self, ConceptError> {
        let name = name.trim();
        let chars = name.chars().count();
        if chars == 0 {
            return Err(ConceptError::Empty);
        }
        if chars > MAX_CONCEPT_CHARS {
            return Err(ConceptError::TooLong(chars));
        }
        Ok(Self {
            name: name.to_string(),
            subject,
            learner_level,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Ambiguous,
    NotAConcept,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionCheck {
    pub concept: Concept,
    pub definition: String,
    pub verdict: Verdict,
    pub rationale: String,
}

impl DefinitionCheck {
    /// Definition must be non-empty exactly when the verdict accepts the concept.
    pub fn is_consistent(&self) -> bool {
        let has_definition = !self.definition.trim().is_empty();
        has_definition == (self.verdict != Verdict::NotAConcept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mapping {
    pub concept_component: String,
    pub analogy_component: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analogy {
    pub id: AnalogyId,
    pub title: String,
    pub scenario: String,
    pub mappings: Vec<Mapping>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    ConceptValidated,
    AnalogiesReady,
    AnalogyChosen,
    StoryboardReady,
    VideoReady,
    Failed,
}

impl SessionState {
    pub const ALL: [SessionState; 7] = [
        Self::Created,
        Self::ConceptValidated,
        Self::AnalogiesReady,
        Self::AnalogyChosen,
        Self::StoryboardReady,
        Self::VideoReady,
        Self::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Created => "created",
            Self::ConceptValidated => "concept_validated",
            Self::AnalogiesReady => "analogies_ready",
            Self::AnalogyChosen => "analogy_chosen",
            Self::StoryboardReady => "storyboard_ready",
            Self::VideoReady => "video_ready",
            Self::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        self == Self::Failed
    }

    /// Position along the forward path; `Failed` has none.
    pub fn rank(self) -> Option<u8> {
        match self {
            Self::Created => Some(0),
            Self::ConceptValidated => Some(1),
            Self::AnalogiesReady => Some(2),
            Self::AnalogyChosen => Some(3),
            Self::StoryboardReady => Some(4),
            Self::VideoReady => Some(5),
            Self::Failed => None,
        }
    }

    /// `true` when this state is at or beyond `other` on the forward path.
    pub fn at_least(self, other: SessionState) -> bool {
        matches!((self.rank(), other.rank()), (Some(a), Some(b)) if a >= b)
    }

    /// The single-step edge set. Self-loops are not edges; operations that
    /// leave the state unchanged (scene edits, re-rendering) need none.
    pub fn can_transition(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Created, ConceptValidated)
                | (ConceptValidated, AnalogiesReady)
                | (AnalogiesReady, AnalogyChosen)
                | (AnalogyChosen, StoryboardReady)
                | (StoryboardReady, VideoReady)
                // backtracking
                | (AnalogyChosen, AnalogiesReady)
                | (StoryboardReady, AnalogyChosen)
                | (VideoReady, StoryboardReady)
        ) || (to == Failed && !self.is_terminal())
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The per-concept state machine record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSession {
    pub id: SessionId,
    pub state: SessionState,
    pub concept: Concept,
    pub definition_check: Option<DefinitionCheck>,
    pub analogies: Option<Vec<Analogy>>,
    pub chosen_analogy_id: Option<AnalogyId>,
    pub storyboard: Option<Storyboard>,
    pub video: Option<BlobRef>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: SessionState,
    pub to: SessionState,
}

impl PipelineSession {
    pub fn new(concept: Concept, now: DateTime<Utc>) -> Self {
        Self {
            id: SessionId::random(),
            state: SessionState::Created,
            concept,
            definition_check: None,
            analogies: None,
            chosen_analogy_id: None,
            storyboard: None,
            video: None,
            created_at: now,
            updated_at: now,
            failure_reason: None,
        }
    }

    /// Moves along one edge, clearing every artifact the target state does
    /// not imply. Callers populate the new state's artifact afterwards.
    pub fn transition(&mut self, to: SessionState) -> Result<(), IllegalTransition> {
        if !self.state.can_transition(to) {
            return Err(IllegalTransition {
                from: self.state,
                to,
            });
        }
        self.state = to;
        self.clear_downstream();
        Ok(())
    }

    fn clear_downstream(&mut self) {
        let s = self.state;
        if s == SessionState::Failed {
            self.analogies = None;
            self.chosen_analogy_id = None;
            self.storyboard = None;
            self.video = None;
            return;
        }
        if !s.at_least(SessionState::AnalogiesReady) {
            self.analogies = None;
        }
        if !s.at_least(SessionState::AnalogyChosen) {
            self.chosen_analogy_id = None;
        }
        if !s.at_least(SessionState::StoryboardReady) {
            self.storyboard = None;
        }
        if !s.at_least(SessionState::VideoReady) {
            self.video = None;
        }
    }

    pub fn chosen_analogy(&self) -> Option<&Analogy> {
        let id = self.chosen_analogy_id.as_ref()?;
        self.analogies.as_ref()?.iter().find(|a| &a.id == id)
    }

    /// Checks that every optional field is populated exactly when the state
    /// implies it, plus the cardinality rules for analogies and scenes.
    pub fn check_invariants(&self) -> Result<(), String> {
        use SessionState::*;
        let s = self.state;
        let failed = s == Failed;
        let expect = |cond: bool, present: bool, field: &str| -> Result<(), String> {
            if cond == present {
                Ok(())
            } else if cond {
                Err(format!("{field} missing in state {s}"))
            } else {
                Err(format!("{field} present in state {s}"))
            }
        };
        expect(
            failed || s.at_least(ConceptValidated),
            self.definition_check.is_some(),
            "definition_check",
        )?;
        expect(s.at_least(AnalogiesReady), self.analogies.is_some(), "analogies")?;
        expect(
            s.at_least(AnalogyChosen),
            self.chosen_analogy_id.is_some(),
            "chosen_analogy_id",
        )?;
        expect(s.at_least(StoryboardReady), self.storyboard.is_some(), "storyboard")?;
        expect(s.at_least(VideoReady), self.video.is_some(), "video")?;
        expect(failed, self.failure_reason.is_some(), "failure_reason")?;

        if let Some(check) = &self.definition_check {
            if !check.is_consistent() {
                return Err("definition presence disagrees with verdict".into());
            }
            let rejected = check.verdict == Verdict::NotAConcept;
            if rejected != failed {
                return Err(format!("verdict {:?} in state {s}", check.verdict));
            }
        }
        if let Some(analogies) = &self.analogies {
            if analogies.len() != ANALOGY_COUNT {
                return Err(format!("{} analogies stored", analogies.len()));
            }
            let titles: HashSet<String> =
                analogies.iter().map(|a| a.title.to_lowercase()).collect();
            if titles.len() != ANALOGY_COUNT {
                return Err("analogy titles are not pairwise distinct".into());
            }
            if analogies.iter().any(|a| a.mappings.is_empty()) {
                return Err("analogy without mappings".into());
            }
        }
        if self.chosen_analogy_id.is_some() && self.chosen_analogy().is_none() {
            return Err("chosen_analogy_id not in stored triple".into());
        }
        if let Some(board) = &self.storyboard {
            if board.scenes.len() != SCENE_COUNT {
                return Err(format!("{} scenes stored", board.scenes.len()));
            }
            board.check_invariants()?;
            if Some(&board.analogy_id) != self.chosen_analogy_id.as_ref() {
                return Err("storyboard built for a different analogy".into());
            }
            if s == VideoReady && board.scenes.iter().any(|sc| sc.image.is_none()) {
                return Err("video ready while a scene lacks its image".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concept_trims_and_bounds() {
        let c = Concept::new("  Newton's First Law \n", Subject::Physics, None).unwrap();
        assert_eq!(c.name(), "Newton's First Law");
        assert_eq!(Concept::new("   ", Subject::Physics, None), Err(ConceptError::Empty));
        let long = "x".repeat(201);
        assert_eq!(
            Concept::new(&long, Subject::Other, None),
            Err(ConceptError::TooLong(201))
        );
        assert!(Concept::new(&"y".repeat(200), Subject::Other, None).is_ok());
    }

    #[test]
    fn concept_deserialization_validates_and_defaults_subject() {
        let c: Concept = serde_json::from_str(r#"{"name":" Ohm's law "}"#).unwrap();
        assert_eq!(c.subject, Subject::Other);
        assert_eq!(c.name(), "Ohm's law");
        assert!(serde_json::from_str::<Concept>(r#"{"name":""}"#).is_err());
    }

    #[test]
    fn enums_serialize_snake_case() {
        assert_eq!(
            serde_json::to_string(&SessionState::ConceptValidated).unwrap(),
            "\"concept_validated\""
        );
        assert_eq!(
            serde_json::to_string(&Verdict::NotAConcept).unwrap(),
            "\"not_a_concept\""
        );
        for s in SessionState::ALL {
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }

    #[test]
    fn edge_set() {
        use SessionState::*;
        assert!(Created.can_transition(ConceptValidated));
        assert!(!Created.can_transition(AnalogiesReady));
        assert!(StoryboardReady.can_transition(AnalogyChosen));
        assert!(!VideoReady.can_transition(AnalogyChosen));
        assert!(VideoReady.can_transition(Failed));
        assert!(!Failed.can_transition(Created));
        assert!(!Failed.can_transition(Failed));
    }

    #[test]
    fn timestamps_are_rfc3339_utc() {
        let concept = Concept::new("Ohm's law", Subject::Physics, None).unwrap();
        let s = PipelineSession::new(concept, "2024-05-01T10:00:00Z".parse().unwrap());
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["created_at"], "2024-05-01T10:00:00Z");
        assert_eq!(v["state"], "created");
        assert!(v["definition_check"].is_null());
    }
}
