//! Generates the benchmark suite and shows a few cases per task.
//!
//! Same seed, same bytes:
//!
//! ```bash
//! cargo run --example bench_suite -- 42
//! ```

use tir::benchgen::{generate_llm_grounded_suite, Task};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let suite = generate_llm_grounded_suite(seed);
    assert_eq!(suite.to_json(), generate_llm_grounded_suite(seed).to_json());

    println!("{} v{} ({} cases, seed {seed})", suite.name, suite.version, suite.cases.len());
    for task in Task::LLM_GROUNDED {
        let cases: Vec<_> = suite.cases.iter().filter(|c| c.task == task).collect();
        println!("\n{} ({})", task.display_name(), cases.len());
        for c in cases.iter().take(3) {
            println!("  {}  {}", c.id, c.prompt);
        }
    }
}
