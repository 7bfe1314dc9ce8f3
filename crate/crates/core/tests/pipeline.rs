//! Engine stages end to end against the mock backends.

use std::collections::BTreeSet;
use std::io::Read;

use analogy_core::error::ErrorClass;
use analogy_core::gateway::MockImageBehavior;
use analogy_core::{
    Concept, Engine, PipelineError, SceneEdit, ServiceConfig, SessionId, SessionState,
    Subject,
};
use tempfile::TempDir;

fn engine_with(tweak: impl FnOnce(&mut ServiceConfig)) -> (TempDir, Engine) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig {
        data_root: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    cfg.encoder.force_fallback = true;
    tweak(&mut cfg);
    (dir, Engine::from_config(&cfg).unwrap())
}

fn engine() -> (TempDir, Engine) {
    engine_with(|_| {})
}

fn concept(name: &str) -> Concept {
    Concept::new(name, Subject::Physics, None).unwrap()
}

/// Runs a session up to `analogy_chosen`, picking the analogy titled `title`.
async fn chosen(engine: &Engine, name: &str, title: &str) -> SessionId {
    let s = engine.create_session(concept(name)).unwrap();
    engine.validate_concept(&s.id).await.unwrap();
    let triple = engine.generate_analogies(&s.id).await.unwrap();
    let pick = triple.iter().find(|a| a.title == title).expect("fixture analogy present");
    engine.choose_analogy(&s.id, &pick.id).unwrap();
    s.id
}

#[tokio::test]
async fn newton_triple_and_four_scene_arc() {
    let (_d, engine) = engine();
    let s = engine.create_session(concept("Newton's First Law")).unwrap();
    assert_eq!(s.state, SessionState::Created);
    engine.validate_concept(&s.id).await.unwrap();
    let triple = engine.generate_analogies(&s.id).await.unwrap();
    let titles: Vec<_> = triple.iter().map(|a| a.title.to_lowercase()).collect();
    assert_eq!(titles, ["skating on ice", "pushing a stalled car", "the stationary soccer ball"]);

    engine.choose_analogy(&s.id, &triple[0].id).unwrap();
    let board = engine.run_storyboard_stage(&s.id).await.unwrap();
    assert_eq!(board.scenes.len(), 4);
    let labels: Vec<_> = board
        .scenes
        .iter()
        .map(|sc| sc.description.split(':').next().unwrap().to_lowercase())
        .collect();
    assert_eq!(labels, ["at rest", "the push", "the glide", "friction stop"]);
    let session = engine.get_session(&s.id).unwrap();
    assert_eq!(session.state, SessionState::StoryboardReady);
    session.check_invariants().unwrap();
}

#[tokio::test]
async fn object_oriented_programming_maps_objects_to_lego_bricks() {
    let (_d, engine) = engine();
    let s = engine
        .create_session(Concept::new("Object-Oriented Programming", Subject::Programming, None).unwrap())
        .unwrap();
    engine.validate_concept(&s.id).await.unwrap();
    let triple = engine.generate_analogies(&s.id).await.unwrap();
    let lego = &triple[0];
    let pairs: BTreeSet<_> = lego
        .mappings
        .iter()
        .map(|m| (m.concept_component.as_str(), m.analogy_component.as_str()))
        .collect();
    assert!(pairs.contains(&("object", "lego brick")));
    assert!(pairs.contains(&("class", "lego structure")));
}

#[tokio::test]
async fn non_concept_fails_the_session() {
    let (_d, engine) = engine();
    let s = engine.create_session(concept("asdfgh")).unwrap();
    engine.validate_concept(&s.id).await.unwrap();
    let s = engine.get_session(&s.id).unwrap();
    assert_eq!(s.state, SessionState::Failed);
    assert!(s.failure_reason.is_some());
    s.check_invariants().unwrap();
    let err = engine.generate_analogies(&s.id).await.unwrap_err();
    assert_eq!(err.class(), ErrorClass::Conflict);
}

#[tokio::test]
async fn two_mock_runs_produce_identical_documents() {
    let mut boards = Vec::new();
    for _ in 0..2 {
        let (_d, engine) = engine();
        let id = chosen(&engine, "Newton's First Law", "Skating on ice").await;
        let s = engine.get_session(&id).unwrap();
        let board = engine.run_storyboard_stage(&id).await.unwrap();
        boards.push((
            serde_json::to_string(&s.analogies).unwrap(),
            serde_json::to_string_pretty(&board).unwrap(),
        ));
    }
    assert_eq!(boards[0], boards[1]);
}

#[tokio::test]
async fn identical_concepts_get_distinct_sessions_listed_newest_first() {
    let (_d, engine) = engine();
    let ids: Vec<_> = (0..3)
        .map(|_| engine.create_session(concept("Newton's First Law")).unwrap().id)
        .collect();
    assert_ne!(ids[0], ids[1]);
    let listed: Vec<_> = engine.list_sessions(0, 10).unwrap().into_iter().map(|s| s.id).collect();
    assert_eq!(listed, ids.iter().rev().cloned().collect::<Vec<_>>());
    let page: Vec<_> = engine.list_sessions(1, 1).unwrap().into_iter().map(|s| s.id).collect();
    assert_eq!(page, vec![ids[1].clone()]);
}

#[tokio::test]
async fn choosing_again_backtracks_and_clears_downstream() {
    let (_d, engine) = engine();
    let s = engine.create_session(concept("Newton's First Law")).unwrap();
    engine.validate_concept(&s.id).await.unwrap();
    let triple = engine.generate_analogies(&s.id).await.unwrap();

    let after = engine.choose_analogy(&s.id, &triple[1].id).unwrap();
    assert_eq!(after.state, SessionState::AnalogyChosen);
    assert_eq!(after.chosen_analogy_id.as_ref(), Some(&triple[1].id));
    engine.run_storyboard_stage(&s.id).await.unwrap();

    let same = engine.choose_analogy(&s.id, &triple[1].id).unwrap();
    assert_eq!(same.state, SessionState::StoryboardReady, "re-choosing the same id is a no-op");

    let after = engine.choose_analogy(&s.id, &triple[0].id).unwrap();
    assert_eq!(after.state, SessionState::AnalogyChosen);
    assert_eq!(after.chosen_analogy_id.as_ref(), Some(&triple[0].id));
    assert!(after.storyboard.is_none());
    after.check_invariants().unwrap();

    let foreign = analogy_core::AnalogyId::derive("Newton's First Law", "Not in the triple");
    let before = engine.get_session(&s.id).unwrap();
    assert!(engine.choose_analogy(&s.id, &foreign).is_err());
    assert_eq!(engine.get_session(&s.id).unwrap(), before);
}

#[tokio::test]
async fn water_tank_checklist_and_tube_repair() {
    let (_d, engine) = engine();
    let id = chosen(&engine, "Voltage and Current", "Water tanks joined by a tube").await;
    let board = engine.run_storyboard_stage(&id).await.unwrap();

    let items: BTreeSet<_> = board.checklist.items.iter().map(|i| i.canonical.as_str()).collect();
    let expected = BTreeSet::from(["two water tanks", "connecting tube", "water level difference", "water flow"]);
    assert_eq!(items, expected);

    let trail = board.scenes[0].coverage.as_ref().unwrap();
    let first = &trail.attempts[0].report;
    assert!(first.missing_required.contains("connecting tube"));
    assert_eq!(trail.attempts.len(), 2, "one repair iteration");
    assert_eq!(trail.best().report.coverage_ratio, 1.0);
    let ratios = trail.ratios();
    assert!(ratios.windows(2).all(|w| w[0] <= w[1]), "{ratios:?}");
    assert_eq!(board.scenes[0].image.as_ref(), Some(&trail.best().image));
}

#[tokio::test]
async fn zero_budget_keeps_the_unrepaired_attempt() {
    let (_d, engine) = engine_with(|c| c.pipeline.repair_budget = 0);
    let id = chosen(&engine, "Voltage and Current", "Water tanks joined by a tube").await;
    let board = engine.run_storyboard_stage(&id).await.unwrap();
    let trail = board.scenes[0].coverage.as_ref().unwrap();
    assert_eq!(trail.attempts.len(), 1);
    assert!(trail.best().report.missing_required.contains("connecting tube"));
    assert!(board.scenes[0].image.is_some());
}

#[tokio::test]
async fn backend_failure_on_scene_three_keeps_earlier_images() {
    let scene3 = "The gliding skater moving across the middle of the rink";
    let (_d, broken) = engine_with(|c| {
        c.mock.image = MockImageBehavior {
            fail_on: vec![scene3.into()],
            ..MockImageBehavior::reference()
        }
    });
    let id = chosen(&broken, "Newton's First Law", "Skating on ice").await;
    let err = broken.run_storyboard_stage(&id).await.unwrap_err();
    assert_eq!(err.class(), ErrorClass::Backend, "{err}");
    let s = broken.get_session(&id).unwrap();
    assert_eq!(s.state, SessionState::AnalogyChosen);
    assert!(s.storyboard.is_none());

    // The healthy run with the same seed draws the same first two images.
    let (_d2, healthy) = engine();
    let id2 = chosen(&healthy, "Newton's First Law", "Skating on ice").await;
    let board = healthy.run_storyboard_stage(&id2).await.unwrap();
    for scene in &board.scenes[..2] {
        let blob = scene.image.as_ref().unwrap();
        let kept = broken.store().stat_blob(&blob.hash).unwrap();
        assert_eq!(&kept, blob);
        broken.store().get_blob(&kept).unwrap();
    }
    assert!(broken.store().stat_blob(&board.scenes[2].image.as_ref().unwrap().hash).is_err());
}

#[tokio::test]
async fn scene_count_mismatch_names_the_count() {
    let bundled: serde_json::Value =
        serde_json::from_str(include_str!("../fixtures/mock_text.json")).unwrap();
    let mut fixtures = bundled.clone();
    for e in fixtures["entries"].as_array_mut().unwrap() {
        if e["task"] == "storyboard_scenes" && e["analogy"] == "Skating on ice" {
            e["response"]["scenes"].as_array_mut().unwrap().pop();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixtures.json");
    std::fs::write(&path, fixtures.to_string()).unwrap();
    let (_d, engine) = engine_with(|c| c.mock.fixtures = Some(path));
    let id = chosen(&engine, "Newton's First Law", "Skating on ice").await;
    let err = engine.run_storyboard_stage(&id).await.unwrap_err();
    assert!(matches!(err, PipelineError::SceneCount(3)), "{err:?}");
    assert!(err.to_string().contains('3'));
}

#[tokio::test]
async fn edits_and_regeneration() {
    let (_d, engine) = engine();
    let id = chosen(&engine, "Newton's First Law", "Skating on ice").await;
    let board = engine.run_storyboard_stage(&id).await.unwrap();
    let original = board.scenes[1].image.clone().unwrap();

    let s = engine
        .edit_scene(&id, 2, &SceneEdit { description: Some("A new caption.".into()), image_prompt: None })
        .unwrap();
    let scene = &s.storyboard.as_ref().unwrap().scenes[1];
    assert_eq!(scene.description, "A new caption.");
    assert_eq!(scene.image.as_ref(), Some(&original));
    assert!(scene.edited_by_user);

    let s = engine
        .edit_scene(
            &id,
            2,
            &SceneEdit { description: None, image_prompt: Some("The skater pushing off the rink wall, seen from above.".into()) },
        )
        .unwrap();
    assert!(s.storyboard.as_ref().unwrap().scenes[1].image.is_none());
    let err = engine.run_video_stage(&id).await.unwrap_err();
    assert_eq!(err.class(), ErrorClass::Validation, "{err}");

    let first = engine.regenerate_scene(&id, 2).await.unwrap();
    assert!(first.image.is_some());
    assert!(!first.coverage.as_ref().unwrap().attempts.is_empty());
    let second = engine.regenerate_scene(&id, 2).await.unwrap();
    assert_eq!(first.image, second.image, "same seed draws the same image");

    assert!(engine.edit_scene(&id, 5, &SceneEdit { description: Some("x".into()), image_prompt: None }).is_err());
    assert!(engine.edit_scene(&id, 0, &SceneEdit { description: Some("x".into()), image_prompt: None }).is_err());
    engine.get_session(&id).unwrap().check_invariants().unwrap();
}

#[tokio::test]
async fn video_fallback_archive_and_backtrack_on_edit() {
    let (_d, engine) = engine();
    let id = chosen(&engine, "Newton's First Law", "Skating on ice").await;
    engine.run_storyboard_stage(&id).await.unwrap();
    let blob = engine.run_video_stage(&id).await.unwrap();
    assert_eq!(blob.media_type, "application/zip");

    let bytes = engine.store().get_blob(&blob).unwrap();
    let mut zip = zip::ZipArchive::new(std::io::Cursor::new(bytes)).unwrap();
    let names: Vec<String> = zip.file_names().map(|n| n.unwrap().into_owned()).collect();
    let keyframes = names.iter().filter(|n| n.ends_with(".png")).count();
    assert_eq!(keyframes, 20);
    assert_eq!(names.len(), 21);
    let mut manifest = String::new();
    zip.by_name("manifest.json").unwrap().read_to_string(&mut manifest).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(manifest["total_duration_ms"], 20_000);

    let s = engine.get_session(&id).unwrap();
    assert_eq!(s.state, SessionState::VideoReady);
    let s = engine
        .edit_scene(&id, 1, &SceneEdit { description: Some("Changed.".into()), image_prompt: None })
        .unwrap();
    assert_eq!(s.state, SessionState::StoryboardReady);
    assert!(s.video.is_none());
}

#[tokio::test]
async fn stages_out_of_order_are_conflicts() {
    let (_d, engine) = engine();
    let s = engine.create_session(concept("Newton's First Law")).unwrap();
    for err in [
        engine.generate_analogies(&s.id).await.unwrap_err(),
        engine.run_storyboard_stage(&s.id).await.unwrap_err(),
        engine.run_video_stage(&s.id).await.unwrap_err(),
    ] {
        assert_eq!(err.class(), ErrorClass::Conflict, "{err}");
    }
    assert_eq!(engine.get_session(&s.id).unwrap().state, SessionState::Created);
    let unknown: SessionId = "0123456789abcdef0123456789abcdef".parse().unwrap();
    assert_eq!(engine.get_session(&unknown).unwrap_err().class(), ErrorClass::NotFound);
}
