//! Serves the session API on 127.0.0.1:8080 with simulated backends.
//!
//! ```bash
//! cargo run --example session_server
//! curl -s -XPOST localhost:8080/sessions -H 'content-type: application/json' \
//!   -d '{"prompt": "A realistic photo of a scene with 2 cat"}'
//! curl -s -XPOST localhost:8080/sessions/<id>/step
//! ```

use std::sync::Arc;

use tir::backend::BackendRegistry;
use tir::service::{serve, AppState};
use tir::sim::ErrorModel;
use tir::store::Store;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::var("TIR_STORE").unwrap_or_else(|_| "tir-data".into());
    let store = Arc::new(Store::open(root)?);
    let mut state = AppState::new(BackendRegistry::with_sim(ErrorModel::default()), store);
    if let Ok(token) = std::env::var("TIR_SERVICE_TOKEN") {
        state = state.with_token(token);
    }
    let addr = "127.0.0.1:8080".parse()?;
    eprintln!("listening on http://{addr}");
    serve(addr, Arc::new(state)).await?;
    Ok(())
}
