//! The refinement loop.
//!
//! Round 0 renders the user's prompt as is. Every later round shows the
//! critic the previous image together with the original prompt and the full
//! prompt/feedback history, takes the critic's refined prompt, and renders
//! it with the same seed. Each round is persisted before the next begins.

mod engine;
mod instruction;
mod types;

pub use engine::{select_final, ConstraintScorer, RefineError, Refiner, RoundScorer, SelectError, Stage};
pub use instruction::{build_refiner_instruction, format_history, EMPTY_HISTORY, REASK_NOTE, REFINED_PROMPT_MARKER};
pub use types::{
    Feedback, FinalSelection, HumanFeedback, ImageRef, Prompt, PromptError, RefinementRound, SeedMode,
    SessionConfig, SessionStatus, Trajectory, MAX_PROMPT_CHARS,
};
