//! Renders the bundled prompts for one StrategyQA instance.

use std::path::Path;

use cfsim::tasks::{load_strategyqa, render_explanation_prompt, ExplanationPlan, TemplateSet};
use cfsim::{Method, ModelSystem};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/strategyqa.json");
    let dataset = load_strategyqa(&path).unwrap();
    let templates = TemplateSet::bundled();
    println!("bundled templates: {}", templates.ids().join(", "));

    let instance = &dataset.instances[0];
    for method in [Method::Cot, Method::PostHoc] {
        let system: ModelSystem = serde_json::from_value(serde_json::json!({
            "provider": "script",
            "model_id": "gpt-4",
            "method": method,
        }))
        .unwrap();
        let request = match render_explanation_prompt(&templates, instance, &system, None).unwrap() {
            ExplanationPlan::Cot(r) => r,
            ExplanationPlan::PostHoc { answer } => answer,
            ExplanationPlan::Forced { explain, .. } => explain,
        };
        println!("\n=== {method:?} ===\n{}", request.transcript());
    }
}
