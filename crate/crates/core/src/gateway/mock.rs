//! Deterministic offline backends.
//!
//! `MockTextBackend` answers from a fixture file when one of its entries
//! matches the rendered prompt, and otherwise synthesizes a schema-valid
//! answer from a ChaCha stream seeded with `sha256(seed, prompt)`. Identical
//! requests give identical text across process restarts.
//!
//! `MockImageBackend` draws a placard whose sidecar lists the components it
//! "depicts": every component enumerated in the prompt except the configured
//! fragile ones, plus every component named in a MUST clause. Fragile
//! components therefore only appear once a repair clause emphasizes them,
//! which mirrors a generator that drops a required part until told twice.

use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{
    placard, BackendError, BackendKind, CaptionBackend, ImageBackend, ImageRequest, RawImage,
    TextBackend, TextRequest,
};
use crate::coverage::{COMPONENTS_LEAD, MUST_LEAD};

const BUNDLED_FIXTURES: &str = include_str!("../../fixtures/mock_text.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub task: String,
    /// Case-insensitive match against the prompt's `Concept: "..."` line.
    #[serde(default)]
    pub concept: Option<String>,
    /// Case-insensitive match against the prompt's `Analogy: "..."` line.
    #[serde(default)]
    pub analogy: Option<String>,
    /// Structured answer, serialized compactly when returned.
    #[serde(default)]
    pub response: Option<Value>,
    /// Verbatim answer, for fixtures that imitate chatty models.
    #[serde(default)]
    pub response_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixtures {
    pub entries: Vec<FixtureEntry>,
}

impl MockFixtures {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_FIXTURES).expect("bundled mock fixtures parse")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// First entry matching the prompt, if any.
    pub fn lookup(&self, prompt: &PromptFacts) -> Option<String> {
        let eq = |want: &Option<String>, got: &Option<String>| match (want, got) {
            (None, _) => true,
            (Some(w), Some(g)) => w.eq_ignore_ascii_case(g),
            (Some(_), None) => false,
        };
        self.entries
            .iter()
            .find(|e| {
                Some(e.task.as_str()) == prompt.task.as_deref()
                    && eq(&e.concept, &prompt.concept)
                    && eq(&e.analogy, &prompt.analogy)
            })
            .map(|e| match (&e.response_text, &e.response) {
                (Some(t), _) => t.clone(),
                (None, Some(v)) => v.to_string(),
                (None, None) => String::new(),
            })
    }
}

/// The labelled lines a mock needs out of a rendered prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptFacts {
    pub task: Option<String>,
    pub concept: Option<String>,
    pub subject: Option<String>,
    pub analogy: Option<String>,
    pub definition: Option<String>,
    pub mappings: Vec<(String, String)>,
}

fn quoted(rest: &str) -> String {
    rest.trim().trim_matches('"').to_string()
}

impl PromptFacts {
    pub fn parse(prompt: &str) -> Self {
        let mut facts = Self::default();
        let mut in_mappings = false;
        for line in prompt.lines() {
            if in_mappings {
                if let Some(pair) = line.strip_prefix("- ") {
                    if let Some((c, a)) = pair.split_once(" -> ") {
                        facts.mappings.push((c.trim().to_string(), a.trim().to_string()));
                        continue;
                    }
                }
                in_mappings = false;
            }
            if let Some(rest) = line.strip_prefix("TASK: ") {
                facts.task = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("Concept: ") {
                facts.concept = Some(quoted(rest));
            } else if let Some(rest) = line.strip_prefix("Subject area: ") {
                facts.subject = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("Analogy: ") {
                facts.analogy = Some(quoted(rest));
            } else if let Some(rest) = line.strip_prefix("Definition: ") {
                facts.definition = Some(rest.trim().to_string());
            } else if line.trim() == "Mappings:" {
                in_mappings = true;
            }
        }
        facts
    }
}

fn rng_for(seed: Option<u64>, prompt: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"mock-text\0");
    h.update(seed.unwrap_or(0).to_le_bytes());
    h.update(prompt.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub struct MockTextBackend {
    fixtures: Arc<MockFixtures>,
}

impl MockTextBackend {
    pub fn new(fixtures: Arc<MockFixtures>) -> Self {
        Self { fixtures }
    }

    /// Pure form of [`TextBackend::complete`].
    pub fn respond(&self, req: &TextRequest) -> String {
        let facts = PromptFacts::parse(&req.prompt);
        if let Some(hit) = self.fixtures.lookup(&facts) {
            return hit;
        }
        let mut rng = rng_for(req.seed, &req.prompt);
        synthesize(&facts, &mut rng).to_string()
    }
}

impl Default for MockTextBackend {
    fn default() -> Self {
        Self::new(Arc::new(MockFixtures::bundled()))
    }
}

#[async_trait]
impl TextBackend for MockTextBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::MockText
    }

    async fn complete(&self, req: &TextRequest) -> Result<String, BackendError> {
        Ok(self.respond(req))
    }
}

struct SourceDomain {
    title: &'static str,
    scenario: &'static str,
    components: [&'static str; 3],
}

const DOMAINS: [SourceDomain; 8] = [
    SourceDomain {
        title: "A busy restaurant kitchen",
        scenario: "Orders arrive on paper tickets, cooks pass dishes along a line of stations, and the head chef decides what happens next.",
        components: ["order ticket", "cooking station", "head chef"],
    },
    SourceDomain {
        title: "A city bus route",
        scenario: "Buses leave the depot on a timetable, stop at numbered shelters, and passengers board or leave at each one.",
        components: ["bus", "bus stop", "timetable board"],
    },
    SourceDomain {
        title: "A garden through the seasons",
        scenario: "Seeds sprout in spring, plants grow toward sunlight over summer, and gardeners prune branches before winter frost.",
        components: ["seedling", "sunlight", "pruning shears"],
    },
    SourceDomain {
        title: "A public library",
        scenario: "Books sit on labelled shelves, a catalogue card points to each one, and a librarian checks volumes in and out.",
        components: ["bookshelf", "catalogue card", "librarian"],
    },
    SourceDomain {
        title: "A relay race",
        scenario: "Runners wait in marked lanes, a baton changes hands inside the exchange zone, and the anchor sprints to the finish tape.",
        components: ["baton", "runner", "finish line"],
    },
    SourceDomain {
        title: "A postal sorting office",
        scenario: "Letters pour out of sacks, clerks read postcodes, and pigeonholes collect mail for each delivery street.",
        components: ["letter", "pigeonhole", "mail sack"],
    },
    SourceDomain {
        title: "A river delta",
        scenario: "One wide river splits into many channels, sand bars shift after floods, and the water finally meets the sea.",
        components: ["river channel", "sand bar", "sea"],
    },
    SourceDomain {
        title: "Building a sandcastle",
        scenario: "Children pack wet sand into buckets, flip out towers, and dig a moat that the rising tide slowly fills.",
        components: ["sand bucket", "tower", "moat"],
    },
];

const ROLES: [&str; 3] = ["core idea", "main change", "limiting factor"];

fn synthesize(facts: &PromptFacts, rng: &mut ChaCha8Rng) -> Value {
    let concept = facts.concept.clone().unwrap_or_else(|| "the concept".into());
    let subject = facts.subject.clone().unwrap_or_else(|| "STEM".into());
    let analogy = facts.analogy.clone().unwrap_or_else(|| "the analogy".into());
    let components: Vec<String> = facts.mappings.iter().map(|(_, a)| a.clone()).collect();
    match facts.task.as_deref() {
        Some("definition_check") => json!({
            "verdict": "valid",
            "definition": format!(
                "{concept} is a {subject} concept. It names a relationship that learners meet repeatedly and can describe in terms of parts that influence one another."
            ),
            "rationale": "Recognised as a standard topic in the stated subject area."
        }),
        Some("analogy_triple") => {
            let picks = sample(rng, DOMAINS.len(), 3).into_vec();
            let analogies: Vec<Value> = picks
                .into_iter()
                .map(|i| {
                    let d = &DOMAINS[i];
                    let mappings: Vec<Value> = d
                        .components
                        .iter()
                        .zip(ROLES)
                        .map(|(c, role)| {
                            json!({"concept_component": format!("{role} of {concept}"), "analogy_component": c})
                        })
                        .collect();
                    json!({"title": d.title, "scenario": d.scenario, "mappings": mappings})
                })
                .collect();
            json!({ "analogies": analogies })
        }
        Some("narrative") => {
            let steps: Vec<String> = facts
                .mappings
                .iter()
                .map(|(c, a)| format!("the {a} plays the part of the {c}"))
                .collect();
            let tone = ["Picture", "Imagine", "Think about"][rng.random_range(0..3)];
            json!({
                "narrative": format!(
                    "{tone} {}. As the story unfolds, {}. By the end, the whole situation mirrors how {concept} works.",
                    analogy.to_lowercase(),
                    if steps.is_empty() { "each part has a job".to_string() } else { steps.join(", then ") }
                )
            })
        }
        Some("storyboard_scenes") => {
            let stages = [
                ("the opening setting", "Setting the scene"),
                ("the first change", "Something changes"),
                ("the key moment", "The key moment"),
                ("the outcome", "The outcome"),
            ];
            let shown = if components.is_empty() {
                "the main objects".to_string()
            } else {
                components.join(", ")
            };
            let scenes: Vec<Value> = stages
                .iter()
                .enumerate()
                .map(|(i, (visual, label))| {
                    let focus = facts
                        .mappings
                        .get(i % facts.mappings.len().max(1))
                        .map(|(c, a)| format!("The {a} stands for the {c}."))
                        .unwrap_or_default();
                    json!({
                        "image_prompt": format!("{analogy}, {visual}, clearly showing {shown}"),
                        "description": format!("{label}: {focus}").trim().to_string()
                    })
                })
                .collect();
            json!({ "scenes": scenes })
        }
        Some("checklist_extract") => json!({ "items": [] }),
        Some("caption_probe") => json!({ "caption": "" }),
        _ => Value::String(format!("mock response {:016x}", rng.random::<u64>())),
    }
}

/// How the mock image backend misrepresents prompts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockImageBehavior {
    /// Components left out unless a MUST clause names them.
    #[serde(default)]
    pub fragile: Vec<String>,
    /// Components never depicted.
    #[serde(default)]
    pub absent: Vec<String>,
    /// Prompts containing any of these substrings fail with HTTP 500.
    #[serde(default)]
    pub fail_on: Vec<String>,
}

impl MockImageBehavior {
    /// The default reproduces the classic two-tanks-no-tube failure.
    pub fn reference() -> Self {
        Self {
            fragile: vec!["connecting tube".into()],
            ..Self::default()
        }
    }
}

/// Components listed after [`COMPONENTS_LEAD`] and components named in MUST
/// clauses, in prompt order.
pub fn requested_components(prompt: &str) -> (Vec<String>, Vec<String>) {
    let until_period = |s: &str| s.split('.').next().unwrap_or("").trim().to_string();
    let listed = prompt
        .find(COMPONENTS_LEAD)
        .map(|i| {
            until_period(&prompt[i + COMPONENTS_LEAD.len()..])
                .split(';')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let emphasized = prompt
        .match_indices(MUST_LEAD)
        .map(|(i, _)| until_period(&prompt[i + MUST_LEAD.len()..]))
        .filter(|c| !c.is_empty())
        .collect();
    (listed, emphasized)
}

pub struct MockImageBackend {
    behavior: MockImageBehavior,
}

impl MockImageBackend {
    pub fn new(behavior: MockImageBehavior) -> Self {
        Self { behavior }
    }

    pub fn depicted(&self, prompt: &str) -> Vec<String> {
        let has = |list: &[String], c: &str| list.iter().any(|x| x.eq_ignore_ascii_case(c));
        let (listed, emphasized) = requested_components(prompt);
        let mut out: Vec<String> = Vec::new();
        for c in listed {
            if !has(&self.behavior.fragile, &c) && !has(&self.behavior.absent, &c) && !has(&out, &c) {
                out.push(c);
            }
        }
        for c in emphasized {
            if !has(&self.behavior.absent, &c) && !has(&out, &c) {
                out.push(c);
            }
        }
        out
    }

    pub fn render(&self, req: &ImageRequest) -> Result<RawImage, BackendError> {
        if self.behavior.fail_on.iter().any(|f| req.prompt.contains(f.as_str())) {
            return Err(BackendError::Status(500));
        }
        Ok(RawImage {
            bytes: placard::render(&req.prompt, req.seed, req.width, req.height, self.depicted(&req.prompt)),
            media_type: "image/png".into(),
        })
    }
}

impl Default for MockImageBackend {
    fn default() -> Self {
        Self::new(MockImageBehavior::reference())
    }
}

#[async_trait]
impl ImageBackend for MockImageBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::MockImage
    }

    async fn generate(&self, req: &ImageRequest) -> Result<RawImage, BackendError> {
        self.render(req)
    }
}

/// Returns the sidecar's component list verbatim, comma separated.
pub struct MockCaptionBackend;

#[async_trait]
impl CaptionBackend for MockCaptionBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::MockCaption
    }

    async fn caption(&self, image: &[u8]) -> Result<String, BackendError> {
        Ok(placard::read_sidecar(image)
            .map(|s| s.components.join(", "))
            .unwrap_or_default())
    }
}

/// Everything the mock family needs, shared by all mock backends.
#[derive(Debug, Clone)]
pub struct MockSettings {
    pub fixtures: Arc<MockFixtures>,
    pub image: MockImageBehavior,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            fixtures: Arc::new(MockFixtures::bundled()),
            image: MockImageBehavior::reference(),
        }
    }
}
