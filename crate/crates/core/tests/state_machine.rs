//! Random operation sequences never break the session state machine.

mod support {
    pub mod state_machine;
}

use analogy_core::SessionState;

#[test]
fn thousand_random_sequences_agree_with_the_reference_model() {
    let reached = support::state_machine::run_cases(1_000).unwrap_or_else(|e| panic!("{e}"));
    let at = |s| reached.get(&s).copied().unwrap_or(0);
    eprintln!("furthest state per sequence: {reached:?}");
    assert_eq!(reached.values().sum::<u32>(), 1_000);
    // The generator must actually drive sessions deep into the pipeline.
    assert!(at(SessionState::Failed) > 0);
    assert!(at(SessionState::StoryboardReady) + at(SessionState::VideoReady) >= 50);
    assert!(at(SessionState::VideoReady) >= 10);
}
