//! Runs one refinement session against the simulated backends and prints
//! every round.
//!
//! ```bash
//! cargo run --example refine_loop -- "A realistic photo of a scene with 3 apple"
//! ```

use tir::eval::check_scene;
use tir::refine::{Prompt, Refiner, SessionConfig};
use tir::sim::{scene_from_svg, ErrorModel, SimCritic, SimGenerator};
use tir::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "A realistic photo of a scene with a red car on the left and a blue bench on the right".into());
    let prompt = Prompt::new(text)?;

    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path())?;
    let generator = SimGenerator::new("sim", ErrorModel::uniform(0.6, 0.2));
    let critic = SimCritic::new("sim");
    let ground_truth = tir::constraints::parse_constraints(prompt.as_str());

    let config = SessionConfig { seed: 7, ..SessionConfig::default() };
    let traj = Refiner::new(&generator, &critic, &store).run(prompt, config)?;

    for round in &traj.rounds {
        let (_, svg) = store.get_blob(&round.image.blob_id)?;
        let verdict = check_scene("demo", &scene_from_svg(&svg).ok_or("not a sim image")?, &ground_truth);
        let met = verdict.per_constraint.iter().filter(|(_, ok)| *ok).count();
        println!("round {}  {met}/{} constraints", round.index, verdict.per_constraint.len());
        println!("  prompt:   {}", round.prompt);
        if let Some(f) = &round.feedback {
            println!("  feedback: {}", f.as_str().lines().next().unwrap_or(""));
        }
    }
    println!("status {:?}", traj.status);
    Ok(())
}
