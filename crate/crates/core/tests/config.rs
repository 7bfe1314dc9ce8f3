//! The shipped example configuration stays loadable.

use std::path::Path;

use analogy_core::gateway::BackendKind;
use analogy_core::ServiceConfig;

#[test]
fn example_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/analogy.example.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    let cfg = ServiceConfig::from_toml(&text, &path).unwrap();
    assert_eq!(cfg.backends.text.kind, BackendKind::LiveText);
    assert_eq!(cfg.backends.caption.kind, BackendKind::MockCaption);
    assert_eq!(cfg.backends.text.credential_ref.as_deref(), Some("ANALOGY_TEXT_KEY"));
    assert!(!cfg.all_mock());
    assert_eq!(cfg, ServiceConfig { backends: cfg.backends.clone(), ..ServiceConfig::default() });
}
