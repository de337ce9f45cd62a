//! Closed-loop prompt refinement for black-box text-to-image generators.
//!
//! A generator renders the prompt, a multimodal critic compares the image
//! with the original request and the history of earlier attempts, and its
//! refined prompt drives the next render. The crate ships the loop, HTTP
//! adapters for OpenAI-compatible endpoints, a deterministic simulated
//! world for testing the loop without credentials, a compositional
//! benchmark generator, scoring rules, a filesystem store and an HTTP
//! session service.

pub mod backend;
pub mod benchgen;
pub mod cli;
pub mod constraints;
pub mod eval;
pub mod refine;
pub mod service;
pub mod sim;
pub mod store;
