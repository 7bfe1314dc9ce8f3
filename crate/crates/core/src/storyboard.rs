//! Narrative and four-scene storyboard for a chosen analogy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coverage::{self, ComponentChecklist, CoverageTrail, ImageSpec};
use crate::error::PipelineError;
use crate::gateway::{Gateway, TextRequest};
use crate::ids::AnalogyId;
use crate::prompt::{
    mappings_block, NarrativePayload, StoryboardScenesPayload, TemplateId, TemplateSet,
};
use crate::session::{Analogy, Concept};
use crate::store::{BlobRef, Store};

pub const SCENE_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// 1-based position in the storyboard.
    pub index: u8,
    pub image_prompt: String,
    /// Learner-facing text shown with the image.
    pub description: String,
    pub image: Option<BlobRef>,
    pub coverage: Option<CoverageTrail>,
    pub edited_by_user: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storyboard {
    pub analogy_id: AnalogyId,
    pub narrative: String,
    pub scenes: Vec<Scene>,
    pub checklist: ComponentChecklist,
    /// Template id to version for every template used while building.
    pub template_versions: BTreeMap<String, String>,
}

impl Storyboard {
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.scenes.len() != SCENE_COUNT {
            return Err(format!("{} scenes, expected {SCENE_COUNT}", self.scenes.len()));
        }
        for (i, scene) in self.scenes.iter().enumerate() {
            if scene.index as usize != i + 1 {
                return Err(format!("scene at position {} has index {}", i + 1, scene.index));
            }
            if scene.image.is_some() && scene.coverage.is_none() {
                return Err(format!("scene {} has an image but no coverage trail", scene.index));
            }
        }
        self.checklist.validate().map_err(|e| e.to_string())?;
        if self.checklist.analogy_id != self.analogy_id {
            return Err("checklist belongs to a different analogy".into());
        }
        Ok(())
    }

    pub fn scene(&self, index: u8) -> Result<&Scene, PipelineError> {
        self.scenes
            .iter()
            .find(|s| s.index == index)
            .ok_or_else(|| bad_index(index))
    }

    fn scene_mut(&mut self, index: u8) -> Result<&mut Scene, PipelineError> {
        self.scenes
            .iter_mut()
            .find(|s| s.index == index)
            .ok_or_else(|| bad_index(index))
    }

    pub fn all_images(&self) -> bool {
        self.scenes.iter().all(|s| s.image.is_some())
    }
}

fn bad_index(index: u8) -> PipelineError {
    PipelineError::Invalid(format!("scene index {index} is outside 1..={SCENE_COUNT}"))
}

/// Shared dependencies of the storyboard operations.
pub struct StoryboardContext<'a> {
    pub gateway: &'a Gateway,
    pub store: &'a dyn Store,
    pub templates: &'a TemplateSet,
    pub seed: Option<u64>,
    pub image_width: u32,
    pub image_height: u32,
    pub repair_budget: u32,
}

impl StoryboardContext<'_> {
    fn image_spec(&self, index: u8) -> ImageSpec {
        ImageSpec {
            width: self.image_width,
            height: self.image_height,
            seed: self.seed.map(|s| s.wrapping_add(index as u64)),
        }
    }

    async fn scene_loop(
        &self,
        prompt: &str,
        checklist: &ComponentChecklist,
        index: u8,
    ) -> Result<CoverageTrail, PipelineError> {
        coverage::coverage_loop(
            self.gateway,
            self.store,
            self.templates,
            prompt,
            checklist,
            self.repair_budget,
            self.image_spec(index),
        )
        .await
    }
}

/// Progress sink: stage label and overall fraction.
pub type ProgressFn<'a> = &'a (dyn Fn(&str, f64) + Send + Sync);

/// Narrative first, then four scene drafts, the checklist, and finally one
/// coverage loop per scene. Scene images are generated concurrently; every
/// image already produced stays in the store even if another scene fails.
pub async fn build_storyboard(
    ctx: &StoryboardContext<'_>,
    concept: &Concept,
    analogy: &Analogy,
    learner_clause: &str,
    progress: ProgressFn<'_>,
) -> Result<Storyboard, PipelineError> {
    let base = BTreeMap::from([
        ("concept".to_string(), concept.name().to_string()),
        ("analogy_title".to_string(), analogy.title.clone()),
        ("scenario".to_string(), analogy.scenario.clone()),
        ("mappings".to_string(), mappings_block(&analogy.mappings)),
        ("learner_clause".to_string(), learner_clause.to_string()),
    ]);

    progress("narrative", 0.05);
    let prompt = ctx.templates.render(TemplateId::Narrative, &base)?;
    let raw = ctx
        .gateway
        .complete_text(&TextRequest::new(prompt).with_seed(ctx.seed))
        .await?;
    let narrative = ctx
        .templates
        .parse(TemplateId::Narrative, &raw.text)?
        .decode::<NarrativePayload>()?
        .narrative;

    progress("scenes", 0.15);
    let mut bindings = base.clone();
    bindings.insert("narrative".into(), narrative.clone());
    let prompt = ctx.templates.render(TemplateId::StoryboardScenes, &bindings)?;
    let raw = ctx
        .gateway
        .complete_text(&TextRequest::new(prompt).with_seed(ctx.seed))
        .await?;
    let drafts = ctx
        .templates
        .parse(TemplateId::StoryboardScenes, &raw.text)?
        .decode::<StoryboardScenesPayload>()?
        .scenes;
    if drafts.len() != SCENE_COUNT {
        return Err(PipelineError::SceneCount(drafts.len()));
    }

    progress("checklist", 0.25);
    let checklist =
        coverage::extract_checklist(ctx.gateway, ctx.templates, concept, analogy, ctx.seed).await?;

    progress("images", 0.3);
    let done = std::sync::atomic::AtomicUsize::new(0);
    let loops = drafts.iter().enumerate().map(|(i, d)| {
        let checklist = &checklist;
        let done = &done;
        async move {
            let trail = ctx.scene_loop(&d.image_prompt, checklist, i as u8 + 1).await;
            let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            progress(
                &format!("image {n}/{SCENE_COUNT}"),
                0.3 + 0.7 * n as f64 / SCENE_COUNT as f64,
            );
            trail
        }
    });
    let trails = futures::future::join_all(loops).await;

    let mut scenes = Vec::with_capacity(SCENE_COUNT);
    for (i, (draft, trail)) in drafts.into_iter().zip(trails).enumerate() {
        let trail = trail?;
        scenes.push(Scene {
            index: i as u8 + 1,
            image_prompt: draft.image_prompt,
            description: draft.description,
            image: Some(trail.best().image.clone()),
            coverage: Some(trail),
            edited_by_user: false,
        });
    }

    let board = Storyboard {
        analogy_id: analogy.id.clone(),
        narrative,
        scenes,
        checklist,
        template_versions: ctx.templates.versions(),
    };
    board.check_invariants().map_err(PipelineError::Precondition)?;
    Ok(board)
}

/// User edit of one scene.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEdit {
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub image_prompt: Option<String>,
}

/// Applies `edit` to scene `index`. Returns whether the image prompt changed,
/// in which case the image and coverage trail have been cleared.
pub fn edit_scene(board: &mut Storyboard, index: u8, edit: &SceneEdit) -> Result<bool, PipelineError> {
    let scene = board.scene_mut(index)?;
    let description = edit
        .description
        .as_ref()
        .filter(|d| **d != scene.description);
    let prompt = edit
        .image_prompt
        .as_ref()
        .filter(|p| **p != scene.image_prompt);
    if description.is_none() && prompt.is_none() {
        return Err(PipelineError::Invalid("edit changes nothing".into()));
    }
    if prompt.is_some_and(|p| p.trim().is_empty()) {
        return Err(PipelineError::Invalid("image prompt must not be empty".into()));
    }
    if let Some(d) = description {
        scene.description = d.clone();
    }
    let prompt_changed = prompt.is_some();
    if let Some(p) = prompt {
        scene.image_prompt = p.clone();
        scene.image = None;
        scene.coverage = None;
    }
    scene.edited_by_user = true;
    Ok(prompt_changed)
}

/// Runs a fresh coverage loop for scene `index` and replaces its image and
/// trail.
pub async fn regenerate_scene_image(
    ctx: &StoryboardContext<'_>,
    board: &mut Storyboard,
    index: u8,
) -> Result<Scene, PipelineError> {
    let prompt = board.scene(index)?.image_prompt.clone();
    if prompt.trim().is_empty() {
        return Err(PipelineError::Precondition(format!(
            "scene {index} has no image prompt"
        )));
    }
    let trail = ctx.scene_loop(&prompt, &board.checklist, index).await?;
    let scene = board.scene_mut(index)?;
    scene.image = Some(trail.best().image.clone());
    scene.coverage = Some(trail);
    Ok(scene.clone())
}

/// Human-readable export: title, narrative and the four captioned images.
/// `link` turns a blob reference into the image URL or path to embed.
pub fn export_markdown(
    concept: &str,
    analogy_title: &str,
    board: &Storyboard,
    link: impl Fn(&Scene, &BlobRef) -> String,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {concept}: {analogy_title}\n");
    let _ = writeln!(out, "{}\n", board.narrative);
    for scene in &board.scenes {
        let _ = writeln!(out, "## Scene {}\n", scene.index);
        match &scene.image {
            Some(blob) => {
                let _ = writeln!(out, "![Scene {}]({})\n", scene.index, link(scene, blob));
            }
            None => {
                let _ = writeln!(out, "_Image not generated yet._\n");
            }
        }
        let _ = writeln!(out, "{}\n", scene.description);
        if let Some(trail) = &scene.coverage {
            let missing = &trail.best().report.missing_required;
            if !missing.is_empty() {
                let names: Vec<&str> = missing.iter().map(String::as_str).collect();
                let _ = writeln!(out, "> Missing components: {}\n", names.join(", "));
            }
        }
    }
    out
}
