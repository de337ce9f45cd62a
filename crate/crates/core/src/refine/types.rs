use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::MediaType;

/// Longest prompt accepted, in characters.
pub const MAX_PROMPT_CHARS: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt is empty")]
    Empty,
    #[error("prompt has {0} characters, limit is {MAX_PROMPT_CHARS}")]
    TooLong(usize),
}

/// A generation prompt: non-empty after trimming, at most
/// [`MAX_PROMPT_CHARS`] characters. Oversized prompts are refused, never
/// truncated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Prompt(String);

impl Prompt {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::Empty);
        }
        let chars = text.chars().count();
        if chars > MAX_PROMPT_CHARS {
            return Err(PromptError::TooLong(chars));
        }
        Ok(Prompt(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Prompt {
    type Error = PromptError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Prompt::new(value)
    }
}

impl From<Prompt> for String {
    fn from(p: Prompt) -> String {
        p.0
    }
}

impl AsRef<str> for Prompt {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Critic feedback for one refinement round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Feedback(pub String);

impl Feedback {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub blob_id: String,
    pub media_type: MediaType,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRound {
    pub index: usize,
    pub prompt: Prompt,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// A note typed by a person between rounds. It travels in the feedback
/// channel: the next critique sees it in the history, the prompt is still
/// written by the critic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanFeedback {
    pub after_round: usize,
    pub author: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalSelection {
    #[default]
    Last,
    BestScored,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// The session seed is reused for every generation.
    #[default]
    Fixed,
    /// Round `i` uses `seed + i`.
    PerRoundOffset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_iterations: u32,
    pub seed: u64,
    pub final_selection: FinalSelection,
    pub generator_id: String,
    pub critic_id: String,
    pub seed_mode: SeedMode,
    /// Stop before `max_iterations` once the critic reports alignment and
    /// returns the previous prompt unchanged.
    pub early_stop: bool,
    /// Overrides the generator's default step count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            seed: 0,
            final_selection: FinalSelection::Last,
            generator_id: "sim".into(),
            critic_id: "sim".into(),
            seed_mode: SeedMode::Fixed,
            early_stop: false,
            steps: None,
        }
    }
}

impl SessionConfig {
    pub fn seed_for_round(&self, index: usize) -> u64 {
        match self.seed_mode {
            SeedMode::Fixed => self.seed,
            SeedMode::PerRoundOffset => self.seed.wrapping_add(index as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    #[default]
    Running,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub session_id: String,
    pub original_prompt: Prompt,
    pub rounds: Vec<RefinementRound>,
    pub config: SessionConfig,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub human_feedback: Vec<HumanFeedback>,
}

impl Trajectory {
    pub fn new(session_id: impl Into<String>, original_prompt: Prompt, config: SessionConfig) -> Self {
        Self {
            session_id: session_id.into(),
            original_prompt,
            rounds: Vec::new(),
            config,
            status: SessionStatus::Running,
            abort_reason: None,
            human_feedback: Vec::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == SessionStatus::Finished
    }

    pub fn latest(&self) -> Option<&RefinementRound> {
        self.rounds.last()
    }

    pub fn latest_prompt(&self) -> &Prompt {
        self.rounds
            .last()
            .map(|r| &r.prompt)
            .unwrap_or(&self.original_prompt)
    }

    pub fn prompts(&self) -> Vec<&Prompt> {
        self.rounds.iter().map(|r| &r.prompt).collect()
    }

    pub fn feedback_count(&self) -> usize {
        self.rounds.iter().filter(|r| r.feedback.is_some()).count()
    }

    /// Number of rounds a finished run of this config produces, absent an
    /// early stop.
    pub fn planned_rounds(&self) -> usize {
        self.config.max_iterations as usize + 1
    }
}
