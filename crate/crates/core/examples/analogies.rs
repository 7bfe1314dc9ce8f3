//! Validates a few concepts and generates their analogy triples with the
//! mock text backend, then runs the distinctness gate over each triple.
//!
//! cargo run -p analogy-core --example analogies

use analogy_core::prompt::analogy_quality_gate;
use analogy_core::{Concept, Engine, ServiceConfig, SessionState, Subject};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let cfg = ServiceConfig {
        data_root: data.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let engine = Engine::from_config(&cfg)?;

    let concepts = [
        ("Newton's First Law", Subject::Physics),
        ("Object-Oriented Programming", Subject::Programming),
        ("asdfgh", Subject::Other),
    ];
    for (name, subject) in concepts {
        let session = engine.create_session(Concept::new(name, subject, None)?)?;
        let check = engine.validate_concept(&session.id).await?;
        println!("{name}: {:?}", check.verdict);
        if engine.get_session(&session.id)?.state == SessionState::Failed {
            println!("  rejected: {}\n", check.rationale);
            continue;
        }
        let triple = engine.generate_analogies(&session.id).await?;
        for a in &triple {
            println!("  {} [{}]", a.title, a.id);
            for m in &a.mappings {
                println!("    {} -> {}", m.concept_component, m.analogy_component);
            }
        }
        println!("  distinct: {}\n", analogy_quality_gate(&triple).passed());
    }
    Ok(())
}
