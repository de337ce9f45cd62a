//! Refines a handful of prompts, then exports a blinded side-by-side batch
//! for human raters. `manifest.json` is what raters see; `assignment.json`
//! says which side holds the refined image.

use tir::benchgen::generate_llm_grounded_suite;
use tir::refine::{Refiner, SessionConfig};
use tir::sim::{ErrorModel, SimCritic, SimGenerator};
use tir::store::{BatchLayout, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path().join("store"))?;
    let generator = SimGenerator::new("sim", ErrorModel::default());
    let critic = SimCritic::new("sim");
    let refiner = Refiner::new(&generator, &critic, &store);

    let suite = generate_llm_grounded_suite(1);
    let mut sessions = Vec::new();
    for case in suite.cases.iter().step_by(80) {
        let t = refiner.run(case.prompt.clone(), SessionConfig::default())?;
        sessions.push(t.session_id);
    }

    let out = dir.path().join("batch");
    let batch = store.export_annotation_batch(&sessions, BatchLayout::BaseVsFinal, 3, &out)?;
    for item in &batch.items {
        let files: Vec<&str> = item.images.iter().map(|i| i.file.as_str()).collect();
        println!("{}  {:?}  {}", item.item_id, files, item.prompt);
    }
    println!("\n{}", std::fs::read_to_string(out.join("assignment.json"))?);
    Ok(())
}
