//! Builds the default slideshow manifest for a finished storyboard, samples
//! the pan/zoom motion and renders the keyframe archive used when no video
//! encoder is installed. Pass `--encode` to run ffmpeg as well.
//!
//! cargo run -p analogy-core --example video_manifest -- --encode

use analogy_core::video::{self, interpolate_motion, EncoderConfig, TimingConfig};
use analogy_core::{Concept, Engine, ServiceConfig, Subject};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encode = std::env::args().any(|a| a == "--encode");
    let data = tempfile::tempdir()?;
    let cfg = ServiceConfig {
        data_root: data.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let engine = Engine::from_config(&cfg)?;
    let s = engine.create_session(Concept::new("Newton's First Law", Subject::Physics, None)?)?;
    engine.validate_concept(&s.id).await?;
    let triple = engine.generate_analogies(&s.id).await?;
    engine.choose_analogy(&s.id, &triple[0].id)?;
    let board = engine.run_storyboard_stage(&s.id).await?;

    let timing = TimingConfig::default();
    let manifest = video::build_manifest(&board, &timing)?;
    println!(
        "{} segments, {} fps, {}x{}, {} ms total",
        manifest.segments.len(),
        manifest.fps,
        manifest.resolution.0,
        manifest.resolution.1,
        manifest.total_duration_ms
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = interpolate_motion(&manifest.segments[0], t)?;
        println!("  t={t:.2}: x={:.4} y={:.4} w={:.4} h={:.4}", r.x, r.y, r.w, r.h);
    }

    let store = engine.store();
    let archive = video::render_fallback(&manifest, store.as_ref())?;
    let mut zip = zip::ZipArchive::new(std::io::Cursor::new(archive))?;
    println!("\nfallback archive: {} entries", zip.len());
    for i in [0, 1, zip.len() - 1] {
        println!("  {}", zip.by_index(i)?.name()?);
    }

    if encode {
        let encoder = EncoderConfig {
            fallback: false,
            ..EncoderConfig::default()
        };
        let blob = video::render(&manifest, store.as_ref(), &encoder).await?;
        let bytes = store.get_blob(&blob)?;
        let path = data.path().join("out.mp4");
        std::fs::write(&path, bytes)?;
        let ffmpeg = video::discover_encoder(&encoder);
        let probed = video::probe_duration(&path, ffmpeg.as_deref()).await?;
        println!("\nencoded {} bytes, probed duration {probed:?}", blob.byte_length);
    }
    Ok(())
}
