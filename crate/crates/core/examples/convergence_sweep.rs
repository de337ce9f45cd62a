//! Accuracy per round over the whole suite for a few error rates. With a
//! nonzero discount, clauses the critic spells out get fixed and stay
//! fixed.

use rayon::prelude::*;
use tir::backend::{BackendRegistry, RetryPolicy};
use tir::benchgen::generate_llm_grounded_suite;
use tir::cli::run_bench_case;
use tir::refine::SessionConfig;
use tir::sim::ErrorModel;
use tir::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = generate_llm_grounded_suite(0);
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path())?;
    let template = SessionConfig { max_iterations: 3, ..SessionConfig::default() };

    println!("p     d     r0      r1      r2      r3");
    for (p, d) in [(0.3, 0.2), (0.6, 0.2), (0.6, 0.6), (0.9, 0.1)] {
        let reg = BackendRegistry::with_sim(ErrorModel::uniform(p, d));
        let results: Vec<_> = suite
            .cases
            .par_iter()
            .map(|c| run_bench_case(&reg, &store, c, &template, RetryPolicy::default()))
            .collect();
        let mut row = format!("{p:.1}   {d:.1}");
        for round in 0..=3 {
            let pass = results
                .iter()
                .filter(|r| r.result(Some(round)).is_some_and(|c| c.case_pass))
                .count();
            row.push_str(&format!("   {:5.1}%", 100.0 * pass as f64 / results.len() as f64));
        }
        println!("{row}");
    }
    Ok(())
}
