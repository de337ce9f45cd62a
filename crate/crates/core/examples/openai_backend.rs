//! Registers OpenAI-compatible backends from a TOML file and runs one
//! session with them. Keys come from `TIR_<ID>_API_KEY`.
//!
//! ```toml
//! [backends.dalle]
//! role = "generator"
//! class = "api"
//! endpoint = "https://api.openai.com/v1"
//! model = "dall-e-3"
//!
//! [backends.gpt4o]
//! role = "critic"
//! class = "api"
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4o"
//! rate_per_second = 1.0
//! ```
//!
//! ```bash
//! TIR_DALLE_API_KEY=... TIR_GPT4O_API_KEY=... \
//!   cargo run --example openai_backend -- backends.toml dalle gpt4o
//! ```

use tir::backend::{BackendRegistry, BackendsFile};
use tir::refine::{Prompt, Refiner, SessionConfig};
use tir::sim::ErrorModel;
use tir::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(file), Some(gen_id), Some(critic_id)) = (args.next(), args.next(), args.next()) else {
        eprintln!("usage: openai_backend <backends.toml> <generator-id> <critic-id>");
        std::process::exit(1);
    };

    let mut registry = BackendRegistry::with_sim(ErrorModel::default());
    registry.add_file(&BackendsFile::load(file.as_ref())?, |var| std::env::var(var).ok())?;
    let generator = registry.generator(&gen_id).ok_or("unknown generator")?;
    let critic = registry.critic(&critic_id).ok_or("unknown critic")?;

    let store = Store::open("tir-data")?;
    let config = SessionConfig {
        generator_id: gen_id,
        critic_id,
        ..SessionConfig::default()
    };
    let prompt = Prompt::new("A realistic photo of a scene with a purple backpack and an orange umbrella")?;
    let traj = Refiner::new(generator.as_ref(), critic.as_ref(), &store).run(prompt, config)?;
    for r in &traj.rounds {
        println!("{}  {}  {}", r.index, r.image.blob_id, r.prompt);
    }
    Ok(())
}
