//! Slideshow timing, motion interpolation and rendering.

use analogy_core::coverage::ComponentChecklist;
use analogy_core::gateway::placard;
use analogy_core::video::{
    self, build_manifest, discover_encoder, interpolate_motion, keyframe_count, render,
    render_fallback, EncoderConfig, Rect, TimingConfig, Transition, VideoError,
};
use analogy_core::{AnalogyId, FsStore, Scene, Store, Storyboard};
use proptest::prelude::*;

fn board(store: &dyn Store) -> Storyboard {
    let id = AnalogyId::derive("Newton's First Law", "Ice skater");
    let scenes = (1..=4u8)
        .map(|index| {
            let png = placard::render(&format!("scene {index}"), Some(index as u64), 96, 96, vec![]);
            Scene {
                index,
                image_prompt: format!("prompt {index}"),
                description: format!("Caption for scene {index}."),
                image: Some(store.put_blob(&png, "image/png").unwrap()),
                coverage: None,
                edited_by_user: false,
            }
        })
        .collect();
    Storyboard {
        analogy_id: id.clone(),
        narrative: "A skater glides.".into(),
        scenes,
        checklist: ComponentChecklist {
            analogy_id: id,
            items: vec![],
        },
        template_versions: Default::default(),
    }
}

fn small(timing: TimingConfig) -> TimingConfig {
    TimingConfig {
        width: 64,
        height: 36,
        ..timing
    }
}

fn store() -> (tempfile::TempDir, FsStore) {
    let dir = tempfile::tempdir().unwrap();
    let s = FsStore::open(dir.path()).unwrap();
    (dir, s)
}

#[test]
fn default_timing_is_four_five_second_segments() {
    let (_d, store) = store();
    let m = build_manifest(&board(&store), &TimingConfig::default()).unwrap();
    assert_eq!(m.segments.len(), 4);
    assert!(m.segments.iter().all(|s| s.duration_ms == 5_000));
    assert_eq!(m.total_duration_ms, 20_000);
    assert_eq!(m.fps, 30);
    let kinds: Vec<_> = m.segments.iter().map(|s| s.transition_out).collect();
    assert_eq!(kinds, [Transition::Crossfade, Transition::Crossfade, Transition::Crossfade, Transition::Cut]);
}

#[test]
fn custom_durations_sum_exactly() {
    let (_d, store) = store();
    let timing = TimingConfig {
        scene_ms: Some(vec![3_000, 4_000, 5_000, 6_000]),
        ..TimingConfig::default()
    };
    let m = build_manifest(&board(&store), &timing).unwrap();
    assert_eq!(m.total_duration_ms, 18_000);
    let per: Vec<u32> = m.segments.iter().map(|s| s.duration_ms).collect();
    assert_eq!(per, [3_000, 4_000, 5_000, 6_000]);
}

#[test]
fn degenerate_timings_are_rejected() {
    let (_d, store) = store();
    let b = board(&store);
    for scene_ms in [vec![0, 5_000, 5_000, 5_000], vec![5_000, 5_000, 5_000]] {
        let timing = TimingConfig {
            scene_ms: Some(scene_ms.clone()),
            ..TimingConfig::default()
        };
        let err = build_manifest(&b, &timing).unwrap_err();
        assert!(matches!(err, VideoError::InvalidManifest(_)), "{scene_ms:?}: {err:?}");
    }
    let too_long_fade = TimingConfig {
        segment_ms: 400,
        ..TimingConfig::default()
    };
    assert!(build_manifest(&b, &too_long_fade).is_err());

    let mut missing = b.clone();
    missing.scenes[2].image = None;
    assert!(matches!(
        build_manifest(&missing, &TimingConfig::default()),
        Err(VideoError::Precondition(_))
    ));
}

#[tokio::test]
async fn empty_manifest_is_refused_before_rendering() {
    let (_d, store) = store();
    let mut m = build_manifest(&board(&store), &TimingConfig::default()).unwrap();
    m.segments.clear();
    m.total_duration_ms = 0;
    let cfg = EncoderConfig {
        force_fallback: true,
        ..EncoderConfig::default()
    };
    assert!(matches!(render(&m, &store, &cfg).await, Err(VideoError::Precondition(_))));
}

#[test]
fn interpolation_matches_the_closed_form_at_100_points() {
    let (_d, store) = store();
    let m = build_manifest(&board(&store), &TimingConfig::default()).unwrap();
    let seg = &m.segments[0];
    // Start is the full frame, end is the centered 85% crop.
    for k in 0..100 {
        let t = k as f64 / 99.0;
        let r = interpolate_motion(seg, t).unwrap();
        let side = 1.0 - 0.15 * t;
        let margin = 0.075 * t;
        for (got, want) in [(r.w, side), (r.h, side), (r.x, margin), (r.y, margin)] {
            assert!((got - want).abs() <= 1e-9, "t={t}: {got} vs {want}");
        }
    }
    assert!(interpolate_motion(seg, 1.000_001).is_err());
    assert!(interpolate_motion(seg, -1e-9).is_err());
}

proptest! {
    #[test]
    fn interpolated_rects_stay_in_the_unit_square(
        t in 0.0f64..=1.0,
        a in (0.0f64..0.4, 0.0f64..0.4, 0.3f64..0.6, 0.3f64..0.6),
        b in (0.0f64..0.4, 0.0f64..0.4, 0.3f64..0.6, 0.3f64..0.6),
    ) {
        let (_d, store) = store();
        let timing = TimingConfig {
            start_rect: Rect { x: a.0, y: a.1, w: a.2, h: a.3 },
            end_rect: Rect { x: b.0, y: b.1, w: b.2, h: b.3 },
            ..TimingConfig::default()
        };
        let m = build_manifest(&board(&store), &timing).unwrap();
        let r = interpolate_motion(&m.segments[1], t).unwrap();
        prop_assert!(r.is_within_unit_square(), "{r:?}");
        let lo = a.2.min(b.2) - 1e-12;
        let hi = a.2.max(b.2) + 1e-12;
        prop_assert!(r.w >= lo && r.w <= hi);
    }

    #[test]
    fn totals_equal_the_sum_of_segments(ms in prop::collection::vec(1_000u32..20_000, 4)) {
        let (_d, store) = store();
        let timing = TimingConfig { scene_ms: Some(ms.clone()), ..TimingConfig::default() };
        let m = build_manifest(&board(&store), &timing).unwrap();
        prop_assert_eq!(m.total_duration_ms, ms.iter().map(|&x| x as u64).sum::<u64>());
    }
}

#[test]
fn fallback_archive_holds_keyframes_and_manifest() {
    let (_d, store) = store();
    let m = build_manifest(&board(&store), &small(TimingConfig::default())).unwrap();
    let bytes = render_fallback(&m, &store).unwrap();
    let mut zip = zip::ZipArchive::new(std::io::Cursor::new(&bytes)).unwrap();
    let names: Vec<String> = (0..zip.len()).map(|i| zip.by_index(i).unwrap().name().unwrap().into_owned()).collect();
    let keyframes = names.iter().filter(|n| n.ends_with(".png")).count();
    assert_eq!(keyframes as u32, m.segments.iter().map(keyframe_count).sum::<u32>());
    assert_eq!(keyframes, 20);
    assert!(names.contains(&"manifest.json".to_string()));
    let stored: video::VideoManifest =
        serde_json::from_reader(zip.by_name("manifest.json").unwrap()).unwrap();
    assert_eq!(stored, m);
    let frame = image::load_from_memory(&{
        let mut v = Vec::new();
        std::io::Read::read_to_end(&mut zip.by_name("keyframes/scene2_03.png").unwrap(), &mut v).unwrap();
        v
    })
    .unwrap();
    assert_eq!((frame.width(), frame.height()), (64, 36));
    // Same manifest, same bytes.
    assert_eq!(render_fallback(&m, &store).unwrap(), bytes);
}

#[tokio::test]
async fn encoded_duration_matches_the_manifest() {
    let cfg = EncoderConfig::default();
    let Some(encoder) = discover_encoder(&cfg) else {
        eprintln!("no encoder available; skipping");
        return;
    };
    let (_d, store) = store();
    let timing = small(TimingConfig {
        scene_ms: Some(vec![1_000, 1_500, 2_000, 1_000]),
        transition_ms: 300,
        ..TimingConfig::default()
    });
    let m = build_manifest(&board(&store), &timing).unwrap();
    let blob = render(&m, &store, &cfg).await.unwrap();
    assert_eq!(blob.media_type, video::VIDEO_MEDIA_TYPE);
    let path = store.blob_path(&blob.hash);
    let got = video::probe_duration(&path, Some(&encoder)).await.unwrap();
    let delta = (got.as_millis() as i64 - m.total_duration_ms as i64).abs();
    assert!(delta <= 100, "probed {got:?} for {} ms", m.total_duration_ms);
}

#[test]
fn duration_lines_parse() {
    let line = "  Duration: 00:01:02.50, start: 0.000000, bitrate: 37 kb/s";
    assert_eq!(video::parse_duration_line(line).unwrap().as_millis(), 62_500);
    assert!(video::parse_duration_line("no such line").is_none());
}
