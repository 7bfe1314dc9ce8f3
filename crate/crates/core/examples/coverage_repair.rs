//! The "two tanks, no tube" failure and its repair.
//!
//! The mock image backend leaves out the connecting tube unless a prompt
//! insists on it, exactly like the failure the water-tank analogy is known
//! for. The coverage loop captions each image, notices the missing tube and
//! regenerates with an explicit clause.
//!
//! cargo run -p analogy-core --example coverage_repair

use std::sync::Arc;

use analogy_core::coverage::{
    coverage_loop, verify_text, ChecklistItem, Criticality, ImageSpec, ProbeSource,
    DEFAULT_REPAIR_BUDGET,
};
use analogy_core::gateway::mock::MockSettings;
use analogy_core::gateway::{Gateway, GatewayConfig};
use analogy_core::prompt::TemplateSet;
use analogy_core::{AnalogyId, ComponentChecklist, FsStore};

const SCENE_PROMPT: &str = "Water flows through a narrow tube connected between two water tanks, one tank having significantly more water than the other.";

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let checklist = ComponentChecklist::new(
        AnalogyId::derive("Voltage and Current", "Water tanks"),
        ["two water tanks", "connecting tube", "water level difference", "water flow"]
            .iter()
            .map(|c| ChecklistItem::new(c, Criticality::Required))
            .collect(),
    )?;

    let caption = "Two water tanks, one fuller than the other.";
    let report = verify_text(&checklist, caption, ProbeSource::ImageCaption);
    println!("caption: {caption}");
    println!("  ratio {:.2}, missing {:?}\n", report.coverage_ratio, report.missing_required);

    let templates = Arc::new(TemplateSet::bundled());
    let gateway = Gateway::from_config(&GatewayConfig::mock(), &MockSettings::default(), templates.clone())?;
    let data = tempfile::tempdir()?;
    let store = FsStore::open(data.path())?;
    let spec = ImageSpec {
        width: 512,
        height: 512,
        seed: Some(7),
    };
    let trail = coverage_loop(
        &gateway,
        &store,
        &templates,
        SCENE_PROMPT,
        &checklist,
        DEFAULT_REPAIR_BUDGET,
        spec,
    )
    .await?;
    for a in &trail.attempts {
        println!("attempt {}: ratio {:.2}", a.attempt, a.report.coverage_ratio);
        println!("  prompt:  {}", a.prompt);
        println!("  caption: {}", a.caption);
        println!("  missing: {:?}", a.report.missing_required);
    }
    println!("\nkept attempt {} ({})", trail.best().attempt, trail.best().image.hash);
    Ok(())
}
