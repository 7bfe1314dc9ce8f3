//! Component coverage: which parts of an analogy an image actually shows.
//!
//! A checklist names the source-domain components a depiction needs. Probe
//! text (a scene description or an image caption) is matched against it
//! lexically, and missing required components are fed back into the image
//! prompt as explicit MUST clauses until the budget runs out.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::gateway::{Gateway, ImageRequest, TextRequest};
use crate::ids::AnalogyId;
use crate::prompt::{mappings_block, ChecklistPayload, TemplateId, TemplateSet};
use crate::session::{Analogy, Concept};
use crate::store::{BlobRef, Store};

/// Opens the component list appended to every scene image prompt.
pub const COMPONENTS_LEAD: &str = "Depict each of these components distinctly: ";
/// Opens each repair clause.
pub const MUST_LEAD: &str = "The image MUST clearly show: ";
pub const DEFAULT_REPAIR_BUDGET: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Required,
    Optional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub canonical: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub criticality: Criticality,
}

impl ChecklistItem {
    /// Builds an item whose aliases are the normalized canonical form plus
    /// its singular/plural variants.
    pub fn new(canonical: &str, criticality: Criticality) -> Self {
        Self {
            canonical: canonical.trim().to_string(),
            aliases: aliases_for(canonical),
            criticality,
        }
    }

    pub fn is_required(&self) -> bool {
        self.criticality == Criticality::Required
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentChecklist {
    pub analogy_id: AnalogyId,
    pub items: Vec<ChecklistItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoverageError {
    #[error("checklist has no required item")]
    NoRequiredItem,
    #[error("checklist repeats canonical name {0:?}")]
    DuplicateCanonical(String),
    #[error("checklist item has an empty canonical name")]
    EmptyCanonical,
    #[error("repair needs at least one missing required component")]
    NothingToRepair,
}

impl ComponentChecklist {
    pub fn new(analogy_id: AnalogyId, items: Vec<ChecklistItem>) -> Result<Self, CoverageError> {
        let list = Self { analogy_id, items };
        list.validate()?;
        Ok(list)
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if item.canonical.trim().is_empty() {
                return Err(CoverageError::EmptyCanonical);
            }
            if !seen.insert(item.canonical.as_str()) {
                return Err(CoverageError::DuplicateCanonical(item.canonical.clone()));
            }
        }
        if !self.items.iter().any(ChecklistItem::is_required) {
            return Err(CoverageError::NoRequiredItem);
        }
        Ok(())
    }

    pub fn required(&self) -> impl Iterator<Item = &ChecklistItem> {
        self.items.iter().filter(|i| i.is_required())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    SceneDescription,
    ImageCaption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// The checklist this report was computed against.
    pub checklist_ref: AnalogyId,
    pub probe_source: ProbeSource,
    pub matched: BTreeSet<String>,
    pub missing_required: BTreeSet<String>,
    /// matched required / total required.
    pub coverage_ratio: f64,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing_required.is_empty()
    }
}

/// Lowercases, turns punctuation into spaces and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    !phrase.is_empty() && format!(" {haystack} ").contains(&format!(" {phrase} "))
}

fn ends_with_sibilant(w: &str) -> bool {
    ["s", "x", "z", "ch", "sh"].iter().any(|s| w.ends_with(s))
}

/// Singular and plural variants of the last word of `word`.
fn number_variants(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let consonant_y = word.len() > 1
        && word.ends_with('y')
        && !matches!(word.as_bytes()[word.len() - 2], b'a' | b'e' | b'i' | b'o' | b'u');
    if let Some(stem) = word.strip_suffix("ies").filter(|s| !s.is_empty()) {
        out.push(format!("{stem}y"));
    } else if let Some(stem) = word.strip_suffix("es").filter(|s| ends_with_sibilant(s)) {
        out.push(stem.to_string());
    } else if let Some(stem) = word.strip_suffix('s').filter(|s| !s.is_empty() && !s.ends_with('s')) {
        out.push(stem.to_string());
    } else if consonant_y {
        out.push(format!("{}ies", &word[..word.len() - 1]));
    } else if ends_with_sibilant(word) {
        out.push(format!("{word}es"));
    } else {
        out.push(format!("{word}s"));
    }
    out
}

/// Normalized canonical form followed by its number variants.
pub fn aliases_for(canonical: &str) -> Vec<String> {
    let base = normalize(canonical);
    if base.is_empty() {
        return Vec::new();
    }
    let (head, last) = match base.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l.to_string()),
        None => (String::new(), base.clone()),
    };
    let mut out = vec![base.clone()];
    for v in number_variants(&last) {
        let alias = format!("{head}{v}");
        if !out.contains(&alias) {
            out.push(alias);
        }
    }
    out
}

/// Matches every checklist item against the probe text. An item matches when
/// its canonical name or any alias occurs as a whole-token phrase.
pub fn verify_text(checklist: &ComponentChecklist, probe: &str, source: ProbeSource) -> CoverageReport {
    let text = normalize(probe);
    let mut matched = BTreeSet::new();
    let mut missing_required = BTreeSet::new();
    let mut required = 0usize;
    for item in &checklist.items {
        let hit = std::iter::once(normalize(&item.canonical))
            .chain(item.aliases.iter().map(|a| normalize(a)))
            .any(|phrase| contains_phrase(&text, &phrase));
        if item.is_required() {
            required += 1;
        }
        if hit {
            matched.insert(item.canonical.clone());
        } else if item.is_required() {
            missing_required.insert(item.canonical.clone());
        }
    }
    let coverage_ratio = if required == 0 {
        1.0
    } else {
        (required - missing_required.len()) as f64 / required as f64
    };
    CoverageReport {
        checklist_ref: checklist.analogy_id.clone(),
        probe_source: source,
        matched,
        missing_required,
        coverage_ratio,
    }
}

/// The component list appended to a scene prompt, e.g.
/// ` Depict each of these components distinctly: two water tanks; connecting tube.`
pub fn component_clause(checklist: &ComponentChecklist) -> String {
    let names: Vec<&str> = checklist.items.iter().map(|i| i.canonical.as_str()).collect();
    format!(" {COMPONENTS_LEAD}{}.", names.join("; "))
}

/// Appends one MUST clause per missing required component. Clauses already
/// present are not repeated, so applying the same report twice is a no-op.
pub fn repair_prompt(image_prompt: &str, report: &CoverageReport) -> Result<String, CoverageError> {
    if report.missing_required.is_empty() {
        return Err(CoverageError::NothingToRepair);
    }
    let mut out = image_prompt.to_string();
    for missing in &report.missing_required {
        let clause = format!("{MUST_LEAD}{missing}.");
        if !out.contains(&clause) {
            if !out.is_empty() && !out.ends_with(' ') {
                out.push(' ');
            }
            out.push_str(&clause);
        }
    }
    Ok(out)
}

/// Asks the text backend for the analogy's visual components. The result
/// starts with one required item per mapping, followed by whatever extra
/// components the model lists.
pub async fn extract_checklist(
    gateway: &Gateway,
    templates: &TemplateSet,
    concept: &Concept,
    analogy: &Analogy,
    seed: Option<u64>,
) -> Result<ComponentChecklist, PipelineError> {
    if analogy.mappings.is_empty() {
        return Err(PipelineError::Precondition(format!(
            "analogy {:?} has no mappings",
            analogy.title
        )));
    }
    let bindings = BTreeMap::from([
        ("concept".to_string(), concept.name().to_string()),
        ("analogy_title".to_string(), analogy.title.clone()),
        ("scenario".to_string(), analogy.scenario.clone()),
        ("mappings".to_string(), mappings_block(&analogy.mappings)),
    ]);
    let prompt = templates.render(TemplateId::ChecklistExtract, &bindings)?;
    let completion = gateway
        .complete_text(&TextRequest::new(prompt).with_seed(seed))
        .await?;
    let payload: ChecklistPayload = templates
        .parse(TemplateId::ChecklistExtract, &completion.text)?
        .decode()?;

    let mut items: Vec<ChecklistItem> = Vec::new();
    let mut push = |name: &str, criticality| {
        let key = normalize(name);
        if !key.is_empty() && !items.iter().any(|i| normalize(&i.canonical) == key) {
            items.push(ChecklistItem::new(name, criticality));
        }
    };
    for m in &analogy.mappings {
        push(&m.analogy_component, Criticality::Required);
    }
    for extra in &payload.items {
        push(&extra.canonical, extra.criticality);
    }
    Ok(ComponentChecklist::new(analogy.id.clone(), items)?)
}

/// One generate-caption-verify round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageAttempt {
    /// 1-based.
    pub attempt: u32,
    /// The full prompt sent to the image backend.
    pub prompt: String,
    pub image: BlobRef,
    pub caption: String,
    pub report: CoverageReport,
}

/// Every attempt of one loop run plus the one whose image was kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTrail {
    pub attempts: Vec<CoverageAttempt>,
    /// Index into `attempts`.
    pub selected: usize,
    /// Set when a backend error cut the loop short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interrupted: Option<String>,
}

impl CoverageTrail {
    pub fn best(&self) -> &CoverageAttempt {
        &self.attempts[self.selected]
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.attempts.iter().map(|a| a.report.coverage_ratio).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
}

/// Generates an image for `scene_prompt`, captions it and verifies coverage;
/// while required components are missing and budget remains, repairs the
/// prompt and tries again. Every image is stored as soon as it exists.
///
/// The returned trail selects the attempt with the highest ratio, the latest
/// one on ties. A backend error ends the loop early; it is returned only when
/// no attempt completed.
pub async fn coverage_loop(
    gateway: &Gateway,
    store: &dyn Store,
    templates: &TemplateSet,
    scene_prompt: &str,
    checklist: &ComponentChecklist,
    budget: u32,
    spec: ImageSpec,
) -> Result<CoverageTrail, PipelineError> {
    let bindings = BTreeMap::from([
        ("scene_prompt".to_string(), scene_prompt.to_string()),
        ("component_list".to_string(), component_clause(checklist)),
    ]);
    let mut prompt = templates.render(TemplateId::ImagePrompt, &bindings)?;
    let mut attempts: Vec<CoverageAttempt> = Vec::new();
    let mut interrupted = None;

    for n in 1..=budget + 1 {
        match attempt(gateway, store, &prompt, checklist, spec).await {
            Ok((image, caption, report)) => {
                let next = (!report.is_complete() && n <= budget)
                    .then(|| repair_prompt(&prompt, &report))
                    .transpose()?;
                attempts.push(CoverageAttempt {
                    attempt: n,
                    prompt: prompt.clone(),
                    image,
                    caption,
                    report,
                });
                match next {
                    Some(p) => prompt = p,
                    None => break,
                }
            }
            Err(e) if attempts.is_empty() => return Err(e),
            Err(e) => {
                tracing::warn!(attempt = n, error = %e, "coverage loop interrupted");
                interrupted = Some(e.to_string());
                break;
            }
        }
    }

    let mut selected = 0;
    for (i, a) in attempts.iter().enumerate() {
        if a.report.coverage_ratio >= attempts[selected].report.coverage_ratio {
            selected = i;
        }
    }
    Ok(CoverageTrail {
        attempts,
        selected,
        interrupted,
    })
}

async fn attempt(
    gateway: &Gateway,
    store: &dyn Store,
    prompt: &str,
    checklist: &ComponentChecklist,
    spec: ImageSpec,
) -> Result<(BlobRef, String, CoverageReport), PipelineError> {
    let image = gateway
        .generate_image(&ImageRequest {
            prompt: prompt.to_string(),
            width: spec.width,
            height: spec.height,
            seed: spec.seed,
        })
        .await?;
    let blob = store.put_blob(&image.bytes, &image.media_type)?;
    let caption = gateway.caption_image(&image.bytes).await?;
    let report = verify_text(checklist, &caption, ProbeSource::ImageCaption);
    Ok((blob, caption, report))
}
