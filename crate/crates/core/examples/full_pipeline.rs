//! Runs every stage for one concept against the offline mock backends and
//! prints what each stage produced.
//!
//! cargo run -p analogy-core --example full_pipeline -- "Newton's First Law"

use std::time::Instant;

use analogy_core::{Concept, Engine, ServiceConfig, Subject};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "Newton's First Law".into());
    let data = tempfile::tempdir()?;
    let cfg = ServiceConfig {
        data_root: data.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let engine = Engine::from_config(&cfg)?;
    let started = Instant::now();

    let session = engine.create_session(Concept::new(&name, Subject::Physics, None)?)?;
    let check = engine.validate_concept(&session.id).await?;
    println!("verdict: {:?}\ndefinition: {}\n", check.verdict, check.definition);

    let analogies = engine.generate_analogies(&session.id).await?;
    for (i, a) in analogies.iter().enumerate() {
        println!("analogy {}: {} ({} mappings)", i + 1, a.title, a.mappings.len());
    }

    engine.choose_analogy(&session.id, &analogies[0].id)?;
    let board = engine.run_storyboard_stage(&session.id).await?;
    println!("\nnarrative: {}\n", board.narrative);
    for scene in &board.scenes {
        let trail = scene.coverage.as_ref().expect("built scenes carry a trail");
        println!(
            "scene {}: {}\n  coverage {:.2} after {} attempt(s)",
            scene.index,
            scene.description,
            trail.best().report.coverage_ratio,
            trail.attempts.len()
        );
    }

    let video = engine.run_video_stage(&session.id).await?;
    let done = engine.get_session(&session.id)?;
    println!(
        "\nstate {} with {} ({} bytes) in {:.2?}",
        done.state,
        video.media_type,
        video.byte_length,
        started.elapsed()
    );
    Ok(())
}
