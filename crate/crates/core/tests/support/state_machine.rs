//! Model-based check of the session state machine: random operation
//! sequences run against an in-process engine and against a small reference
//! model, and every step is compared.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use analogy_core::gateway::{
    BackendConfig, BackendError, BackendKind, Gateway, ImageBackend, ImageRequest,
    MockCaptionBackend, MockImageBackend, MockTextBackend, RawImage,
};
use analogy_core::prompt::TemplateSet;
use analogy_core::video::TimingConfig;
use analogy_core::{
    Concept, Engine, EngineSettings, FsStore, PipelineSession, SceneEdit, SessionState, Subject,
};
use async_trait::async_trait;
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Op {
    /// Whatever moves the session forward from its current state.
    Advance(usize),
    Validate,
    Analogies,
    Choose(usize),
    Storyboard,
    Video,
    EditDescription(u8),
    EditPrompt(u8, usize),
    Regenerate(u8),
}

pub fn op() -> impl Strategy<Value = Op> {
    // Scene indices include 0 and 5 so out-of-range edits are exercised.
    prop_oneof![
        12 => (0usize..3).prop_map(Op::Advance),
        3 => Just(Op::Validate),
        3 => Just(Op::Analogies),
        3 => (0usize..3).prop_map(Op::Choose),
        3 => Just(Op::Storyboard),
        2 => Just(Op::Video),
        2 => (0u8..=5).prop_map(Op::EditDescription),
        2 => (0u8..=5, 0usize..PROMPTS.len()).prop_map(|(i, p)| Op::EditPrompt(i, p)),
        2 => (0u8..=5).prop_map(Op::Regenerate),
    ]
}

/// A concept (valid or not) plus up to 20 operations.
pub fn sequence() -> impl Strategy<Value = (bool, Vec<Op>)> {
    (prop::bool::weighted(0.9), prop::collection::vec(op(), 1..20))
}

fn resolve(op: &Op, state: SessionState) -> Op {
    use SessionState::*;
    match (op, state) {
        (Op::Advance(_), Created) => Op::Validate,
        (Op::Advance(_), ConceptValidated) => Op::Analogies,
        (Op::Advance(i), AnalogiesReady) => Op::Choose(*i),
        (Op::Advance(_), AnalogyChosen) => Op::Storyboard,
        (Op::Advance(_), StoryboardReady) => Op::Video,
        (Op::Advance(i), VideoReady | Failed) => Op::Regenerate(*i as u8 + 1),
        (other, _) => other.clone(),
    }
}

const PROMPTS: [&str; 3] = [
    "The skater seen from above on the ice.",
    "A close view of the skate blades on the ice.",
    "The whole rink with the skater far away.",
];

/// Mock image backend whose renders are cached, so long random runs stay fast.
#[derive(Default)]
struct CachedImages {
    inner: MockImageBackend,
    cache: Mutex<HashMap<(String, Option<u64>), RawImage>>,
}

#[async_trait]
impl ImageBackend for CachedImages {
    fn kind(&self) -> BackendKind {
        BackendKind::MockImage
    }

    async fn generate(&self, req: &ImageRequest) -> Result<RawImage, BackendError> {
        let key = (req.prompt.clone(), req.seed);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let img = self.inner.render(req)?;
        self.cache.lock().unwrap().insert(key, img.clone());
        Ok(img)
    }
}

/// Shared across cases; the cache is the only state.
pub struct Harness {
    images: Arc<CachedImages>,
    text: Arc<MockTextBackend>,
}

impl Default for Harness {
    fn default() -> Self {
        Self {
            images: Arc::new(CachedImages::default()),
            text: Arc::new(MockTextBackend::default()),
        }
    }
}

impl Harness {
    fn engine(&self, root: &std::path::Path) -> Engine {
        let gateway = Gateway::new(
            (self.text.clone(), &BackendConfig::mock(BackendKind::MockText)),
            (self.images.clone(), &BackendConfig::mock(BackendKind::MockImage)),
            (Arc::new(MockCaptionBackend), &BackendConfig::mock(BackendKind::MockCaption)),
        );
        let mut settings = EngineSettings::default();
        settings.encoder.force_fallback = true;
        settings.timing = TimingConfig {
            segment_ms: 1_000,
            transition_ms: 200,
            width: 64,
            height: 36,
            ..TimingConfig::default()
        };
        Engine::new(
            Arc::new(FsStore::open(root).unwrap()),
            Arc::new(gateway),
            Arc::new(TemplateSet::bundled()),
            settings,
        )
    }

    /// Runs one sequence and returns the furthest state it reached; `Err`
    /// describes the first divergence from the model.
    pub async fn run(&self, valid: bool, ops: &[Op]) -> Result<SessionState, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let engine = self.engine(dir.path());
        let name = if valid { "Newton's First Law" } else { "asdfgh" };
        let concept = Concept::new(name, Subject::Physics, None).unwrap();
        let id = engine.create_session(concept).map_err(|e| e.to_string())?.id;
        let mut edits = 0u32;
        let mut furthest = SessionState::Created;

        for (step, op) in ops.iter().enumerate() {
            let before = engine.get_session(&id).map_err(|e| e.to_string())?;
            let op = &resolve(op, before.state);
            let expected = model(&before, op, valid);
            let result: Result<(), String> = match op {
                Op::Validate => engine.validate_concept(&id).await.map(drop),
                Op::Analogies => engine.generate_analogies(&id).await.map(drop),
                Op::Choose(i) => {
                    let target = before.analogies.as_ref().and_then(|a| a.get(*i)).map(|a| a.id.clone());
                    match target {
                        Some(t) => engine.choose_analogy(&id, &t).map(drop),
                        None => {
                            let foreign = analogy_core::AnalogyId::derive(name, "not offered");
                            engine.choose_analogy(&id, &foreign).map(drop)
                        }
                    }
                }
                Op::Storyboard => engine.run_storyboard_stage(&id).await.map(drop),
                Op::Video => engine.run_video_stage(&id).await.map(drop),
                Op::EditDescription(i) => {
                    edits += 1;
                    let edit = SceneEdit {
                        description: Some(format!("Edited caption number {edits}.")),
                        image_prompt: None,
                    };
                    engine.edit_scene(&id, *i, &edit).map(drop)
                }
                Op::EditPrompt(i, p) => {
                    let edit = SceneEdit {
                        description: None,
                        image_prompt: Some(PROMPTS[*p].to_string()),
                    };
                    engine.edit_scene(&id, *i, &edit).map(drop)
                }
                Op::Regenerate(i) => engine.regenerate_scene(&id, *i).await.map(drop),
                Op::Advance(_) => unreachable!("resolved above"),
            }
            .map_err(|e| e.to_string());

            let after = engine.get_session(&id).map_err(|e| e.to_string())?;
            let ctx = || format!("step {step} {op:?} from {}", before.state);
            after
                .check_invariants()
                .map_err(|e| format!("{}: invariant broken: {e}", ctx()))?;
            match (expected, result) {
                (None, Ok(())) => return Err(format!("{}: accepted an illegal operation", ctx())),
                (None, Err(_)) if after != before => {
                    return Err(format!("{}: rejected operation changed the session", ctx()))
                }
                (None, Err(_)) => {}
                (Some(_), Err(e)) => return Err(format!("{}: legal operation failed: {e}", ctx())),
                (Some(to), Ok(())) => {
                    if after.state != to {
                        return Err(format!("{}: reached {} instead of {to}", ctx(), after.state));
                    }
                    // Re-choosing walks several backtracking edges at once.
                    let walked_back = matches!(op, Op::Choose(_)) && to == SessionState::AnalogyChosen;
                    if after.state != before.state && !walked_back && !before.state.can_transition(to) {
                        return Err(format!("{}: jumped {} -> {to}", ctx(), before.state));
                    }
                }
            }
            if after.state == SessionState::Failed || after.state.at_least(furthest) {
                furthest = after.state;
            }
            if after.updated_at < before.updated_at {
                return Err(format!("{}: updated_at went backwards", ctx()));
            }
        }
        Ok(furthest)
    }
}

/// The reference model: where a legal operation leads, or `None` when the
/// engine must refuse it.
fn model(s: &PipelineSession, op: &Op, valid: bool) -> Option<SessionState> {
    use SessionState::*;
    let scene_ok = |i: u8| (1..=4).contains(&i);
    let editable = matches!(s.state, StoryboardReady | VideoReady);
    match op {
        Op::Validate if s.state == Created => Some(if valid { ConceptValidated } else { Failed }),
        Op::Analogies if s.state == ConceptValidated => Some(AnalogiesReady),
        Op::Choose(i) if matches!(s.state, AnalogiesReady | AnalogyChosen | StoryboardReady | VideoReady) => {
            let target = s.analogies.as_ref().and_then(|a| a.get(*i)).map(|a| &a.id);
            match target {
                Some(t) if s.chosen_analogy_id.as_ref() == Some(t) => Some(s.state),
                Some(_) => Some(AnalogyChosen),
                None => None,
            }
        }
        Op::Storyboard if s.state == AnalogyChosen => Some(StoryboardReady),
        Op::Video if s.state == StoryboardReady => {
            let complete = s.storyboard.as_ref().is_some_and(|b| b.all_images());
            if complete {
                Some(VideoReady)
            } else {
                None
            }
        }
        Op::EditDescription(i) if editable && scene_ok(*i) => Some(StoryboardReady),
        Op::EditPrompt(i, p) if editable && scene_ok(*i) => {
            let current = &s.storyboard.as_ref().unwrap().scenes[*i as usize - 1].image_prompt;
            if current == PROMPTS[*p] {
                None
            } else {
                Some(StoryboardReady)
            }
        }
        Op::Regenerate(i) if editable && scene_ok(*i) => Some(StoryboardReady),
        _ => None,
    }
}

/// Runs `cases` random sequences. Returns how many sequences reached each
/// state, or the first failure.
pub fn run_cases(cases: u32) -> Result<HashMap<SessionState, u32>, String> {
    use proptest::test_runner::{Config, TestCaseError, TestRunner};
    let harness = Harness::default();
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let reached = Mutex::new(HashMap::new());
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&sequence(), |(valid, ops)| {
            let furthest = rt.block_on(harness.run(valid, &ops)).map_err(TestCaseError::fail)?;
            *reached.lock().unwrap().entry(furthest).or_insert(0) += 1;
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(reached.into_inner().unwrap())
}
