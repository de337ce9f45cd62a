//! Aggregates per-run scores computed by an external tool.

use tir::eval::aggregate_external_scores;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("scores.csv");
    std::fs::write(
        &path,
        "prompt_id,run_index,score\n\
         p1,0,0.81\np1,1,0.77\np1,2,0.79\n\
         p2,0,0.52\np2,1,0.58\n",
    )?;

    let scores = aggregate_external_scores(&path)?;
    for p in &scores.per_prompt {
        println!("{:<4} runs={} mean={:.4} std={:.4}", p.prompt_id, p.runs, p.mean, p.std);
    }
    println!("overall {:.4} ({} std)", scores.overall_mean, scores.std_kind);
    for w in &scores.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
