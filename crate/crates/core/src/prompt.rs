//! Preset prompt templates and strict parsing of model responses.
//!
//! Templates are JSON data files (`{id, version, body, required_placeholders,
//! output_schema}`) with `{{name}}` placeholders. The default set lives in the
//! crate's `templates/` directory and is bundled into the binary; a deployment
//! can point [`TemplateSet::load_dir`] at its own copy instead.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::session::Analogy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    DefinitionCheck,
    AnalogyTriple,
    Narrative,
    StoryboardScenes,
    ChecklistExtract,
    ImagePrompt,
    CaptionProbe,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        Self::DefinitionCheck,
        Self::AnalogyTriple,
        Self::Narrative,
        Self::StoryboardScenes,
        Self::ChecklistExtract,
        Self::ImagePrompt,
        Self::CaptionProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DefinitionCheck => "definition_check",
            Self::AnalogyTriple => "analogy_triple",
            Self::Narrative => "narrative",
            Self::StoryboardScenes => "storyboard_scenes",
            Self::ChecklistExtract => "checklist_extract",
            Self::ImagePrompt => "image_prompt",
            Self::CaptionProbe => "caption_probe",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template id `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {template}: missing binding for placeholder `{placeholder}`")]
    MissingPlaceholder {
        template: TemplateId,
        placeholder: String,
    },
    #[error("template {template}: response violates schema: {detail}")]
    SchemaViolation { template: TemplateId, detail: String },
    #[error("template file {file}: {detail}")]
    InvalidTemplate { file: String, detail: String },
    #[error("template set is missing `{0}`")]
    MissingTemplate(TemplateId),
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
}

/// On-disk template document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateFile {
    pub id: TemplateId,
    pub version: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
    pub output_schema: Option<Value>,
}

#[derive(Debug)]
pub struct PromptTemplate {
    pub file: TemplateFile,
    validator: Option<jsonschema::Validator>,
}

impl PromptTemplate {
    pub fn id(&self) -> TemplateId {
        self.file.id
    }

    pub fn version(&self) -> &str {
        &self.file.version
    }

    fn compile(file: TemplateFile, origin: &str) -> Result<Self, PromptError> {
        let invalid = |detail: String| PromptError::InvalidTemplate {
            file: origin.to_string(),
            detail,
        };
        let present = placeholders(&file.body);
        for name in &file.required_placeholders {
            if !present.contains(name) {
                return Err(invalid(format!(
                    "required placeholder `{name}` does not appear in body"
                )));
            }
        }
        let validator = match (&file.output_schema, file.id) {
            (None, TemplateId::ImagePrompt) => None,
            (None, id) => return Err(invalid(format!("{id} needs an output_schema"))),
            (Some(Value::Object(m)), _) if m.is_empty() => {
                return Err(invalid("output_schema is empty".into()))
            }
            (Some(schema), _) => Some(
                jsonschema::validator_for(schema)
                    .map_err(|e| invalid(format!("output_schema does not compile: {e}")))?,
            ),
        };
        Ok(Self { file, validator })
    }
}

/// Names of every `{{name}}` placeholder occurring in `body`.
pub fn placeholders(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    scan(body, |piece| {
        if let Piece::Placeholder(name) = piece {
            out.insert(name.to_string());
        }
    });
    out
}

enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn scan<'a>(body: &'a str, mut emit: impl FnMut(Piece<'a>)) {
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end)
                if !after[..end].is_empty()
                    && after[..end]
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b == b'_' || b.is_ascii_digit()) =>
            {
                emit(Piece::Text(&rest[..start]));
                emit(Piece::Placeholder(&after[..end]));
                rest = &after[end + 2..];
            }
            _ => {
                emit(Piece::Text(&rest[..start + 2]));
                rest = after;
            }
        }
    }
    emit(Piece::Text(rest));
}

/// A schema-validated model response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub template_id: TemplateId,
    pub payload: Value,
    pub raw: String,
    pub repair_attempts: u32,
}

impl ParsedResponse {
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, PromptError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| PromptError::SchemaViolation {
            template: self.template_id,
            detail: e.to_string(),
        })
    }
}

/// The loaded, immutable template set.
#[derive(Debug)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

const BUNDLED: [(&str, &str); 7] = [
    ("definition_check.json", include_str!("../templates/definition_check.json")),
    ("analogy_triple.json", include_str!("../templates/analogy_triple.json")),
    ("narrative.json", include_str!("../templates/narrative.json")),
    ("storyboard_scenes.json", include_str!("../templates/storyboard_scenes.json")),
    ("checklist_extract.json", include_str!("../templates/checklist_extract.json")),
    ("image_prompt.json", include_str!("../templates/image_prompt.json")),
    ("caption_probe.json", include_str!("../templates/caption_probe.json")),
];

impl TemplateSet {
    /// The template files shipped in this crate's `templates/` directory.
    pub fn bundled() -> Self {
        Self::from_sources(BUNDLED.iter().map(|(n, s)| (n.to_string(), s.to_string())))
            .expect("bundled templates are valid")
    }

    /// Loads every `*.json` file in `dir`; all seven templates must be present.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut sources = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                sources.push((path.display().to_string(), std::fs::read_to_string(&path)?));
            }
        }
        Self::from_sources(sources)
    }

    fn from_sources(
        sources: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for (origin, text) in sources {
            let file: TemplateFile =
                serde_json::from_str(&text).map_err(|e| PromptError::InvalidTemplate {
                    file: origin.clone(),
                    detail: e.to_string(),
                })?;
            let t = PromptTemplate::compile(file, &origin)?;
            if templates.insert(t.id(), t).is_some() {
                return Err(PromptError::InvalidTemplate {
                    file: origin,
                    detail: "duplicate template id".into(),
                });
            }
        }
        for id in TemplateId::ALL {
            if !templates.contains_key(&id) {
                return Err(PromptError::MissingTemplate(id));
            }
        }
        Ok(Self { templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn versions(&self) -> BTreeMap<String, String> {
        self.templates
            .values()
            .map(|t| (t.id().to_string(), t.version().to_string()))
            .collect()
    }

    /// Substitutes bindings into the template body. Optional placeholders
    /// without a binding render empty; bindings the body never names are
    /// ignored.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, PromptError> {
        let t = self.get(id);
        if let Some(missing) = t
            .file
            .required_placeholders
            .iter()
            .find(|p| !bindings.contains_key(*p))
        {
            return Err(PromptError::MissingPlaceholder {
                template: id,
                placeholder: missing.clone(),
            });
        }
        let mut out = String::with_capacity(t.file.body.len() + 256);
        scan(&t.file.body, |piece| match piece {
            Piece::Text(s) => out.push_str(s),
            Piece::Placeholder(name) => {
                if let Some(v) = bindings.get(name) {
                    out.push_str(v);
                }
            }
        });
        Ok(out)
    }

    /// Validates `raw` against the template's output schema. When the text as
    /// a whole is not a valid document, one repair pass strips code fences and
    /// surrounding prose and retries on the extracted block.
    pub fn parse(&self, id: TemplateId, raw: &str) -> Result<ParsedResponse, PromptError> {
        let t = self.get(id);
        let violation = |detail: String| PromptError::SchemaViolation {
            template: id,
            detail,
        };
        let Some(validator) = &t.validator else {
            let text = raw.trim();
            if text.is_empty() {
                return Err(violation("empty response".into()));
            }
            return Ok(ParsedResponse {
                template_id: id,
                payload: Value::String(text.to_string()),
                raw: raw.to_string(),
                repair_attempts: 0,
            });
        };
        let check = |text: &str| -> Result<Value, String> {
            let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
            let errors: Vec<String> = validator
                .iter_errors(&value)
                .map(|e| format!("{} at `{}`", e, e.instance_path()))
                .collect();
            if errors.is_empty() {
                Ok(value)
            } else {
                Err(errors.join("; "))
            }
        };
        if raw.trim().is_empty() {
            return Err(violation("empty response".into()));
        }
        let first_error = match check(raw.trim()) {
            Ok(payload) => {
                return Ok(ParsedResponse {
                    template_id: id,
                    payload,
                    raw: raw.to_string(),
                    repair_attempts: 0,
                })
            }
            Err(e) => e,
        };
        let Some(block) = extract_structured_block(raw) else {
            return Err(violation(first_error));
        };
        match check(block) {
            Ok(payload) => Ok(ParsedResponse {
                template_id: id,
                payload,
                raw: raw.to_string(),
                repair_attempts: 1,
            }),
            Err(e) => Err(violation(format!("after repair: {e}"))),
        }
    }
}

/// Finds the structured block inside a chatty response: the body of the first
/// fenced code block if there is one, otherwise the first balanced `{...}` or
/// `[...]` span.
pub fn extract_structured_block(raw: &str) -> Option<&str> {
    if let Some(open) = raw.find("```") {
        let after = &raw[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(close) = body.find("```") {
            let inner = body[..close].trim();
            if !inner.is_empty() {
                return balanced_span(inner).or(Some(inner));
            }
        }
    }
    balanced_span(raw)
}

fn balanced_span(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

// Typed payloads for each schema-bearing template.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionPayload {
    pub verdict: crate::session::Verdict,
    pub definition: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyDraft {
    pub title: String,
    pub scenario: String,
    pub mappings: Vec<crate::session::Mapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyTriplePayload {
    pub analogies: Vec<AnalogyDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativePayload {
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDraft {
    pub image_prompt: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryboardScenesPayload {
    pub scenes: Vec<SceneDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistDraftItem {
    pub canonical: String,
    pub criticality: crate::coverage::Criticality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistPayload {
    pub items: Vec<ChecklistDraftItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPayload {
    pub caption: String,
}

/// Renders mappings as the `- concept -> analogy` lines the templates expect.
pub fn mappings_block(mappings: &[crate::session::Mapping]) -> String {
    mappings
        .iter()
        .map(|m| format!("- {} -> {}", m.concept_component, m.analogy_component))
        .collect::<Vec<_>>()
        .join("\n")
}

// Analogy distinctness.

/// Scenario pairs at or above this Jaccard token overlap count as duplicates.
pub const MAX_SCENARIO_OVERLAP: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityViolation {
    WrongCount { count: usize },
    DuplicateTitle { first: usize, second: usize },
    ScenarioOverlap { first: usize, second: usize, jaccard: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    pub violations: Vec<QualityViolation>,
}

impl QualityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn scenario_tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Checks a generated triple for distinctness: case-insensitive title
/// inequality plus pairwise scenario overlap below [`MAX_SCENARIO_OVERLAP`].
pub fn analogy_quality_gate(triple: &[Analogy]) -> QualityReport {
    let mut report = QualityReport::default();
    if triple.len() != crate::session::ANALOGY_COUNT {
        report.violations.push(QualityViolation::WrongCount {
            count: triple.len(),
        });
    }
    let tokens: Vec<_> = triple.iter().map(|a| scenario_tokens(&a.scenario)).collect();
    for i in 0..triple.len() {
        for j in i + 1..triple.len() {
            if triple[i].title.trim().to_lowercase() == triple[j].title.trim().to_lowercase() {
                report.violations.push(QualityViolation::DuplicateTitle {
                    first: i,
                    second: j,
                });
            }
            let overlap = jaccard(&tokens[i], &tokens[j]);
            if overlap >= MAX_SCENARIO_OVERLAP {
                report.violations.push(QualityViolation::ScenarioOverlap {
                    first: i,
                    second: j,
                    jaccard: overlap,
                });
            }
        }
    }
    report
}
