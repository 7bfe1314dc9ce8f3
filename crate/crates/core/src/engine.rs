//! The pipeline engine: session state machine, stage orchestration, leases
//! and background jobs.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use tokio::sync::Semaphore;

use crate::config::ServiceConfig;
use crate::error::PipelineError;
use crate::gateway::mock::{MockFixtures, MockSettings};
use crate::gateway::{BackendKind, Gateway, TextRequest};
use crate::ids::{AnalogyId, JobId, SessionId};
use crate::jobs::{JobHandle, JobKind, JobRegistry};
use crate::prompt::{
    analogy_quality_gate, AnalogyTriplePayload, DefinitionPayload, PromptError, TemplateId,
    TemplateSet,
};
use crate::session::{
    Analogy, Concept, DefinitionCheck, PipelineSession, SessionState, Verdict,
};
use crate::store::{BlobRef, FsStore, Store, StoreError};
use crate::storyboard::{self, Scene, SceneEdit, Storyboard, StoryboardContext};
use crate::video::{self, EncoderConfig, TimingConfig};

const RETRY_CLAUSE: &str = "Your previous answer was rejected: the three analogies must have different titles and describe clearly different everyday situations, and the answer must be valid JSON.";

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    /// Seed passed to every text and image call.
    pub seed: u64,
    pub repair_budget: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub timing: TimingConfig,
    pub encoder: EncoderConfig,
    pub render_parallelism: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self::from(&ServiceConfig::default())
    }
}

impl From<&ServiceConfig> for EngineSettings {
    fn from(cfg: &ServiceConfig) -> Self {
        Self {
            seed: cfg.mock.seed,
            repair_budget: cfg.pipeline.repair_budget,
            image_width: cfg.pipeline.image_width,
            image_height: cfg.pipeline.image_height,
            timing: cfg.video.clone(),
            encoder: cfg.encoder.clone(),
            render_parallelism: cfg.pipeline.render_parallelism,
        }
    }
}

/// A long-running stage that can be started in the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Analogies,
    Storyboard,
    SceneImage(u8),
    Video,
}

impl Stage {
    pub fn job_kind(self) -> JobKind {
        match self {
            Self::Validate => JobKind::Validate,
            Self::Analogies => JobKind::Analogies,
            Self::Storyboard => JobKind::Storyboard,
            Self::SceneImage(_) => JobKind::SceneImage,
            Self::Video => JobKind::Video,
        }
    }
}

/// Exclusive right to run a stage on one session; released on drop.
pub struct Lease {
    held: Arc<Mutex<HashSet<SessionId>>>,
    id: SessionId,
}

impl Drop for Lease {
    fn drop(&mut self) {
        self.held.lock().unwrap().remove(&self.id);
    }
}

struct Progress<'a>(Option<&'a JobHandle>);

impl Progress<'_> {
    fn report(&self, label: &str, fraction: f64) {
        if let Some(job) = self.0 {
            job.progress(label, fraction);
        }
    }
}

pub struct Engine {
    store: Arc<dyn Store>,
    gateway: Arc<Gateway>,
    templates: Arc<TemplateSet>,
    jobs: Arc<JobRegistry>,
    settings: EngineSettings,
    leases: Arc<Mutex<HashSet<SessionId>>>,
    render_slots: Semaphore,
    clock: Mutex<DateTime<Utc>>,
}

impl Engine {
    pub fn new(
        store: Arc<dyn Store>,
        gateway: Arc<Gateway>,
        templates: Arc<TemplateSet>,
        settings: EngineSettings,
    ) -> Self {
        Self {
            store,
            gateway,
            templates,
            jobs: JobRegistry::new(),
            render_slots: Semaphore::new(settings.render_parallelism.max(1)),
            settings,
            leases: Arc::default(),
            clock: Mutex::new(DateTime::<Utc>::MIN_UTC),
        }
    }

    /// Opens the store and builds backends as `cfg` describes.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, PipelineError> {
        let templates = Arc::new(match &cfg.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::bundled(),
        });
        let fixtures = match &cfg.mock.fixtures {
            Some(path) => MockFixtures::load(path).map_err(PipelineError::Invalid)?,
            None => MockFixtures::bundled(),
        };
        let mock = MockSettings {
            fixtures: Arc::new(fixtures),
            image: cfg.mock.image.clone(),
        };
        let gateway = Gateway::from_config(&cfg.backends, &mock, templates.clone())?;
        let store = FsStore::open(&cfg.data_root)?;
        Ok(Self::new(
            Arc::new(store),
            Arc::new(gateway),
            templates,
            EngineSettings::from(cfg),
        ))
    }

    pub fn store(&self) -> &Arc<dyn Store> {
        &self.store
    }

    pub fn jobs(&self) -> &Arc<JobRegistry> {
        &self.jobs
    }

    pub fn templates(&self) -> &Arc<TemplateSet> {
        &self.templates
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn backend_kinds(&self) -> [BackendKind; 3] {
        self.gateway.kinds()
    }

    /// Strictly increasing wall-clock timestamps.
    fn now(&self) -> DateTime<Utc> {
        let mut last = self.clock.lock().unwrap();
        let t = Utc::now().max(*last + Duration::microseconds(1));
        *last = t;
        t
    }

    pub fn lease(&self, id: &SessionId) -> Result<Lease, PipelineError> {
        if !self.leases.lock().unwrap().insert(id.clone()) {
            return Err(PipelineError::Busy(id.clone()));
        }
        Ok(Lease {
            held: self.leases.clone(),
            id: id.clone(),
        })
    }

    fn load(&self, id: &SessionId) -> Result<PipelineSession, PipelineError> {
        self.store.load_session(id).map_err(|e| match e {
            StoreError::SessionNotFound(id) => PipelineError::SessionNotFound(id),
            other => other.into(),
        })
    }

    fn commit(&self, session: &mut PipelineSession) -> Result<(), PipelineError> {
        session.updated_at = self.now().max(session.created_at);
        session
            .check_invariants()
            .map_err(|e| PipelineError::Precondition(format!("session invariant: {e}")))?;
        self.store.save_session(session)?;
        Ok(())
    }

    fn ctx(&self) -> StoryboardContext<'_> {
        StoryboardContext {
            gateway: &self.gateway,
            store: self.store.as_ref(),
            templates: &self.templates,
            seed: Some(self.settings.seed),
            image_width: self.settings.image_width,
            image_height: self.settings.image_height,
            repair_budget: self.settings.repair_budget,
        }
    }

    async fn ask(&self, id: TemplateId, bindings: &BTreeMap<String, String>) -> Result<crate::prompt::ParsedResponse, PipelineError> {
        let prompt = self.templates.render(id, bindings)?;
        let completion = self
            .gateway
            .complete_text(&TextRequest::new(prompt).with_seed(Some(self.settings.seed)))
            .await?;
        Ok(self.templates.parse(id, &completion.text)?)
    }

    // Read side.

    pub fn get_session(&self, id: &SessionId) -> Result<PipelineSession, PipelineError> {
        self.load(id)
    }

    /// Newest first.
    pub fn list_sessions(&self, offset: usize, limit: usize) -> Result<Vec<PipelineSession>, PipelineError> {
        Ok(self.store.list_sessions(offset, limit)?)
    }

    // Stages.

    pub fn create_session(&self, concept: Concept) -> Result<PipelineSession, PipelineError> {
        let mut s = PipelineSession::new(concept, self.now());
        self.commit(&mut s)?;
        Ok(s)
    }

    pub async fn validate_concept(&self, id: &SessionId) -> Result<DefinitionCheck, PipelineError> {
        let _lease = self.lease(id)?;
        self.do_validate(id, &Progress(None)).await
    }

    pub async fn generate_analogies(&self, id: &SessionId) -> Result<Vec<Analogy>, PipelineError> {
        let _lease = self.lease(id)?;
        self.do_analogies(id, &Progress(None)).await
    }

    pub fn choose_analogy(&self, id: &SessionId, analogy_id: &AnalogyId) -> Result<PipelineSession, PipelineError> {
        let _lease = self.lease(id)?;
        let mut s = self.load(id)?;
        require(&s, &CHOOSABLE, "choose", "analogies_ready or later")?;
        let known = s
            .analogies
            .as_ref()
            .is_some_and(|a| a.iter().any(|x| &x.id == analogy_id));
        if !known {
            return Err(PipelineError::Invalid(format!(
                "analogy {analogy_id} is not one of this session's analogies"
            )));
        }
        if s.chosen_analogy_id.as_ref() == Some(analogy_id) {
            return Ok(s);
        }
        // Walk the backtracking edges down to analogies_ready, clearing
        // everything built on the previous choice.
        while s.state != SessionState::AnalogiesReady {
            let back = match s.state {
                SessionState::VideoReady => SessionState::StoryboardReady,
                SessionState::StoryboardReady => SessionState::AnalogyChosen,
                _ => SessionState::AnalogiesReady,
            };
            s.transition(back)?;
        }
        s.transition(SessionState::AnalogyChosen)?;
        s.chosen_analogy_id = Some(analogy_id.clone());
        self.commit(&mut s)?;
        Ok(s)
    }

    pub async fn run_storyboard_stage(&self, id: &SessionId) -> Result<Storyboard, PipelineError> {
        let _lease = self.lease(id)?;
        self.do_storyboard(id, &Progress(None)).await
    }

    pub async fn run_video_stage(&self, id: &SessionId) -> Result<BlobRef, PipelineError> {
        let _lease = self.lease(id)?;
        self.do_video(id, &Progress(None)).await
    }

    /// Edits one scene. From video_ready the session drops back to
    /// storyboard_ready because the video no longer matches.
    pub fn edit_scene(&self, id: &SessionId, index: u8, edit: &SceneEdit) -> Result<PipelineSession, PipelineError> {
        let _lease = self.lease(id)?;
        let mut s = self.load(id)?;
        require(&s, &EDITABLE, "edit_scene", "storyboard_ready or video_ready")?;
        let board = s.storyboard.as_mut().expect("storyboard present in editable states");
        storyboard::edit_scene(board, index, edit)?;
        if s.state == SessionState::VideoReady {
            s.transition(SessionState::StoryboardReady)?;
        }
        self.commit(&mut s)?;
        Ok(s)
    }

    pub async fn regenerate_scene(&self, id: &SessionId, index: u8) -> Result<Scene, PipelineError> {
        let _lease = self.lease(id)?;
        self.do_regenerate(id, index, &Progress(None)).await
    }

    /// Starts `stage` in the background and returns its job id. State and
    /// lease are checked before the job exists, so a wrong-state or busy
    /// call never creates a job.
    pub fn start(self: &Arc<Self>, id: &SessionId, stage: Stage) -> Result<JobId, PipelineError> {
        let lease = self.lease(id)?;
        let s = self.load(id)?;
        match stage {
            Stage::Validate => require(&s, &[SessionState::Created], "validate", "created")?,
            Stage::Analogies => require(&s, &[SessionState::ConceptValidated], "analogies", "concept_validated")?,
            Stage::Storyboard => require(&s, &[SessionState::AnalogyChosen], "storyboard", "analogy_chosen")?,
            Stage::Video => {
                require(&s, &[SessionState::StoryboardReady], "video", "storyboard_ready")?;
                video_precondition(&s)?;
            }
            Stage::SceneImage(index) => {
                require(&s, &EDITABLE, "regenerate", "storyboard_ready or video_ready")?;
                s.storyboard.as_ref().expect("storyboard present").scene(index)?;
            }
        }
        let job = self.jobs.create(id.clone(), stage.job_kind());
        let job_id = job.id().clone();
        let engine = self.clone();
        let id = id.clone();
        tokio::spawn(async move {
            let _lease = lease;
            job.progress("started", 0.0);
            let p = Progress(Some(&job));
            let result = match stage {
                Stage::Validate => engine.do_validate(&id, &p).await.map(|c| {
                    format!("verdict {}", serde_json::to_value(c.verdict).unwrap_or_default())
                }),
                Stage::Analogies => engine.do_analogies(&id, &p).await.map(|_| "3 analogies".into()),
                Stage::Storyboard => engine.do_storyboard(&id, &p).await.map(|_| "4 scenes".into()),
                Stage::SceneImage(i) => engine.do_regenerate(&id, i, &p).await.map(|_| format!("scene {i}")),
                Stage::Video => engine.do_video(&id, &p).await.map(|b| b.hash),
            };
            match result {
                Ok(message) => job.succeed(Some(message)),
                Err(e) => {
                    tracing::warn!(session = %id, error = %e, "stage failed");
                    job.fail(e.to_string());
                }
            }
        });
        Ok(job_id)
    }

    async fn do_validate(&self, id: &SessionId, p: &Progress<'_>) -> Result<DefinitionCheck, PipelineError> {
        let mut s = self.load(id)?;
        require(&s, &[SessionState::Created], "validate", "created")?;
        p.report("definition", 0.2);
        let bindings = BTreeMap::from([
            ("concept".to_string(), s.concept.name().to_string()),
            ("subject".to_string(), s.concept.subject.as_str().to_string()),
            ("learner_clause".to_string(), learner_clause(&s.concept)),
        ]);
        let payload: DefinitionPayload = self.ask(TemplateId::DefinitionCheck, &bindings).await?.decode()?;
        let mut check = DefinitionCheck {
            concept: s.concept.clone(),
            definition: payload.definition.trim().to_string(),
            verdict: payload.verdict,
            rationale: payload.rationale.trim().to_string(),
        };
        if check.verdict == Verdict::NotAConcept {
            check.definition.clear();
        } else if check.definition.is_empty() {
            return Err(PromptError::SchemaViolation {
                template: TemplateId::DefinitionCheck,
                detail: "definition is empty for an accepted concept".into(),
            }
            .into());
        }
        p.report("definition", 0.9);
        s.definition_check = Some(check.clone());
        if check.verdict == Verdict::NotAConcept {
            s.transition(SessionState::Failed)?;
            s.failure_reason = Some(format!("not a STEM concept: {}", check.rationale));
        } else {
            s.transition(SessionState::ConceptValidated)?;
        }
        self.commit(&mut s)?;
        Ok(check)
    }

    /// One parse repair (inside `parse`), then one full regeneration with a
    /// corrective clause, then failure.
    async fn do_analogies(&self, id: &SessionId, p: &Progress<'_>) -> Result<Vec<Analogy>, PipelineError> {
        let mut s = self.load(id)?;
        require(&s, &[SessionState::ConceptValidated], "analogies", "concept_validated")?;
        let definition = s
            .definition_check
            .as_ref()
            .map(|c| c.definition.clone())
            .unwrap_or_default();
        let mut bindings = BTreeMap::from([
            ("concept".to_string(), s.concept.name().to_string()),
            ("subject".to_string(), s.concept.subject.as_str().to_string()),
            ("definition".to_string(), definition),
            ("learner_clause".to_string(), learner_clause(&s.concept)),
        ]);
        let mut last_err = None;
        for round in 0..2 {
            if round == 1 {
                bindings.insert("retry_clause".into(), RETRY_CLAUSE.into());
                p.report("analogies retry", 0.5);
            } else {
                p.report("analogies", 0.1);
            }
            let drafts = match self.ask(TemplateId::AnalogyTriple, &bindings).await {
                Ok(parsed) => match parsed.decode::<AnalogyTriplePayload>() {
                    Ok(d) => d.analogies,
                    Err(e) => {
                        last_err = Some(e.into());
                        continue;
                    }
                },
                Err(e @ PipelineError::Prompt(_)) => {
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let triple: Vec<Analogy> = drafts
                .into_iter()
                .map(|d| Analogy {
                    id: AnalogyId::derive(s.concept.name(), &d.title),
                    title: d.title.trim().to_string(),
                    scenario: d.scenario.trim().to_string(),
                    mappings: d.mappings,
                })
                .collect();
            let report = analogy_quality_gate(&triple);
            if report.passed() {
                s.transition(SessionState::AnalogiesReady)?;
                s.analogies = Some(triple.clone());
                self.commit(&mut s)?;
                return Ok(triple);
            }
            last_err = Some(PipelineError::NotDistinct(report));
        }
        Err(last_err.expect("at least one round ran"))
    }

    async fn do_storyboard(&self, id: &SessionId, p: &Progress<'_>) -> Result<Storyboard, PipelineError> {
        let mut s = self.load(id)?;
        require(&s, &[SessionState::AnalogyChosen], "storyboard", "analogy_chosen")?;
        let analogy = s.chosen_analogy().cloned().expect("chosen analogy in triple");
        let report = |label: &str, f: f64| p.report(label, f);
        let board = storyboard::build_storyboard(
            &self.ctx(),
            &s.concept,
            &analogy,
            &learner_clause(&s.concept),
            &report,
        )
        .await?;
        s.transition(SessionState::StoryboardReady)?;
        s.storyboard = Some(board.clone());
        self.commit(&mut s)?;
        Ok(board)
    }

    async fn do_regenerate(&self, id: &SessionId, index: u8, p: &Progress<'_>) -> Result<Scene, PipelineError> {
        let mut s = self.load(id)?;
        require(&s, &EDITABLE, "regenerate", "storyboard_ready or video_ready")?;
        p.report("image", 0.1);
        let mut board = s.storyboard.clone().expect("storyboard present");
        let scene = storyboard::regenerate_scene_image(&self.ctx(), &mut board, index).await?;
        if s.state == SessionState::VideoReady {
            s.transition(SessionState::StoryboardReady)?;
        }
        s.storyboard = Some(board);
        self.commit(&mut s)?;
        Ok(scene)
    }

    async fn do_video(&self, id: &SessionId, p: &Progress<'_>) -> Result<BlobRef, PipelineError> {
        let mut s = self.load(id)?;
        require(&s, &[SessionState::StoryboardReady], "video", "storyboard_ready")?;
        video_precondition(&s)?;
        let board = s.storyboard.as_ref().expect("storyboard present");
        let manifest = video::build_manifest(board, &self.settings.timing)?;
        p.report("waiting for render slot", 0.05);
        let _slot = self.render_slots.acquire().await.expect("semaphore never closed");
        p.report("render", 0.1);
        let blob = video::render(&manifest, self.store.as_ref(), &self.settings.encoder).await?;
        s.transition(SessionState::VideoReady)?;
        s.video = Some(blob.clone());
        self.commit(&mut s)?;
        Ok(blob)
    }
}

const CHOOSABLE: [SessionState; 4] = [
    SessionState::AnalogiesReady,
    SessionState::AnalogyChosen,
    SessionState::StoryboardReady,
    SessionState::VideoReady,
];

const EDITABLE: [SessionState; 2] = [SessionState::StoryboardReady, SessionState::VideoReady];

fn require(
    s: &PipelineSession,
    allowed: &[SessionState],
    operation: &'static str,
    expected: &'static str,
) -> Result<(), PipelineError> {
    if allowed.contains(&s.state) {
        Ok(())
    } else {
        Err(PipelineError::WrongState {
            state: s.state,
            operation,
            expected,
        })
    }
}

fn video_precondition(s: &PipelineSession) -> Result<(), PipelineError> {
    let board = s.storyboard.as_ref().expect("storyboard present");
    match board.scenes.iter().find(|sc| sc.image.is_none()) {
        Some(sc) => Err(PipelineError::Precondition(format!(
            "scene {} has no image; regenerate it first",
            sc.index
        ))),
        None => Ok(()),
    }
}

fn learner_clause(concept: &Concept) -> String {
    concept
        .learner_level
        .map(|l| format!("Learner level: {}. Match vocabulary and depth to this level.", l.as_str()))
        .unwrap_or_default()
}
