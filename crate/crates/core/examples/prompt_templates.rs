//! Renders the bundled templates and shows strict parsing, including the
//! single repair pass that digs a JSON block out of chatty model output.
//!
//! cargo run -p analogy-core --example prompt_templates

use std::collections::BTreeMap;

use analogy_core::prompt::{TemplateId, TemplateSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let templates = TemplateSet::bundled();
    for (id, version) in templates.versions() {
        println!("{id:<18} v{version}");
    }

    let bindings = BTreeMap::from([
        ("concept".to_string(), "Ohm's Law".to_string()),
        ("subject".to_string(), "physics".to_string()),
    ]);
    let prompt = templates.render(TemplateId::DefinitionCheck, &bindings)?;
    println!("\n--- rendered definition_check ---\n{prompt}");

    let chatty = "Sure! Here is the result:\n```json\n{\"definition\": \"V = IR\", \"verdict\": \"valid\", \"rationale\": \"standard\"}\n```\nHope that helps.";
    let parsed = templates.parse(TemplateId::DefinitionCheck, chatty)?;
    println!(
        "\nparsed after {} repair pass(es): {}",
        parsed.repair_attempts, parsed.payload
    );

    match templates.parse(TemplateId::DefinitionCheck, "{\"verdict\": \"maybe\"}") {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
