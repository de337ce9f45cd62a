use crate::refine::{Feedback, Prompt, REFINED_PROMPT_MARKER};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MalformedCritique {
    #[error("critic response has no `REFINED PROMPT:` marker")]
    NoMarker,
    #[error("critic response has an empty refined prompt")]
    EmptyPrompt,
    #[error("refined prompt rejected: {0}")]
    InvalidPrompt(String),
}

/// Refined prompt and feedback extracted from one critic answer.
#[derive(Debug, Clone, PartialEq)]
pub struct CritiqueResult {
    pub refined_prompt: Prompt,
    pub feedback: Feedback,
    pub raw: String,
}

impl CritiqueResult {
    pub fn from_raw(raw: impl Into<String>) -> Result<Self, MalformedCritique> {
        let raw = raw.into();
        let (prompt, feedback) = parse_critique_response(&raw)?;
        let refined_prompt =
            Prompt::new(prompt).map_err(|e| MalformedCritique::InvalidPrompt(e.to_string()))?;
        Ok(Self {
            refined_prompt,
            feedback: Feedback(feedback),
            raw,
        })
    }

    /// The critic opened its feedback with `ALIGNED`.
    pub fn reports_aligned(&self) -> bool {
        self.feedback.as_str().trim_start().starts_with("ALIGNED")
    }
}

/// Splits a critic answer at its last `REFINED PROMPT:` marker.
///
/// The refined prompt is the text after the marker, trimmed, with one layer
/// of enclosing double quotes removed. Feedback is everything before the
/// marker, trimmed.
pub fn parse_critique_response(raw: &str) -> Result<(String, String), MalformedCritique> {
    let at = raw.rfind(REFINED_PROMPT_MARKER).ok_or(MalformedCritique::NoMarker)?;
    let feedback = raw[..at].trim();
    let mut prompt = raw[at + REFINED_PROMPT_MARKER.len()..].trim();
    if prompt.len() >= 2 && prompt.starts_with('"') && prompt.ends_with('"') {
        prompt = &prompt[1..prompt.len() - 1];
    }
    if prompt.trim().is_empty() {
        return Err(MalformedCritique::EmptyPrompt);
    }
    Ok((prompt.to_string(), feedback.to_string()))
}

/// Inverse of [`parse_critique_response`] for well-formed answers.
pub fn render_critique_response(feedback: &str, prompt: &str) -> String {
    format!("{feedback}\n{REFINED_PROMPT_MARKER}\n\"{prompt}\"")
}
