//! Generation and critique backends.
//!
//! A [`Generator`] turns a prompt into image bytes; a [`Critic`] reads the
//! refiner instruction plus the last image and answers in free text that
//! ends with a `REFINED PROMPT:` section. Both are black boxes to the loop.
//!
//! Transport concerns live here too: the retry policy, credential
//! scrubbing, in-flight caps and the OpenAI-compatible HTTP adapters.

pub mod config;
pub mod http;
mod parse;
mod throttle;

use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::refine::{ImageRef, Prompt};
use crate::store::{Store, StoreError};

pub use config::{BackendRegistry, BackendSpec, BackendsFile, ConfigError};
pub use parse::{parse_critique_response, render_critique_response, CritiqueResult, MalformedCritique};
pub use throttle::{Semaphore, Throttled, TokenBucket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Svg,
    Png,
    Jpeg,
}

impl MediaType {
    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Svg => "image/svg+xml",
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MediaType::Svg => "svg",
            MediaType::Png => "png",
            MediaType::Jpeg => "jpg",
        }
    }

    /// Guesses the media type from magic bytes.
    pub fn sniff(bytes: &[u8]) -> Option<MediaType> {
        if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            Some(MediaType::Png)
        } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(MediaType::Jpeg)
        } else if bytes.starts_with(b"<svg") || bytes.starts_with(b"<?xml") {
            Some(MediaType::Svg)
        } else {
            None
        }
    }
}

/// Family of a generation backend; decides the default step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendClass {
    Diffusion,
    RectifiedFlow,
    Api,
    Sim,
}

impl BackendClass {
    pub fn default_steps(self) -> u32 {
        match self {
            BackendClass::Diffusion => 100,
            _ => 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub class: BackendClass,
    pub model: String,
    pub default_steps: u32,
    pub max_in_flight: usize,
}

impl BackendDescriptor {
    pub fn new(id: impl Into<String>, class: BackendClass, model: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            class,
            model: model.into(),
            default_steps: class.default_steps(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: Prompt,
    pub seed: u64,
    pub steps: u32,
    pub width: u32,
    pub height: u32,
}

impl GenerationRequest {
    pub fn new(prompt: Prompt, seed: u64, steps: u32) -> Self {
        Self {
            prompt,
            seed,
            steps: steps.max(1),
            width: 1024,
            height: 1024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedImage {
    pub bytes: Vec<u8>,
    pub media_type: MediaType,
}

/// A second chance after an answer without a usable marker: the previous
/// answer is echoed back as an assistant turn, followed by the note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReAsk {
    pub previous_response: String,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct CritiqueRequest {
    pub instruction: String,
    pub image: ImageRef,
    pub model_id: String,
    /// Structured copy of what the instruction already says, for critics that
    /// do not read prose.
    pub original_prompt: Prompt,
    pub prompt_history: Vec<Prompt>,
    pub reask: Option<ReAsk>,
}

pub trait Generator: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage, BackendError>;
}

pub trait Critic: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    /// Returns the raw response text.
    fn critique(&self, request: &CritiqueRequest, image: &[u8]) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend unavailable (status {status})")]
    Unavailable { status: u16 },
    #[error("authentication failed (status {status})")]
    AuthFailure { status: u16 },
    #[error("backend failure: {0}")]
    Failure(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout | BackendError::RateLimited { .. } | BackendError::Unavailable { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub backoff_factor: f64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            backoff_factor: 2.0,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Delay scheduled before attempt `attempt` (1-based). The first attempt
    /// is never delayed.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = self.backoff_factor.max(1.0).powi(attempt as i32 - 2);
        Duration::from_secs_f64(self.base_delay_ms as f64 * factor / 1000.0)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// What a retried call did, for the run log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub attempts: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{error} after {attempts} attempt(s)")]
pub struct RetryExhausted {
    pub error: BackendError,
    pub attempts: u32,
}

/// Runs `call` under `policy`. Retryable errors are retried with exponential
/// backoff until `max_attempts`; anything else fails immediately.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut call: impl FnMut(u32) -> Result<T, BackendError>,
) -> Result<(T, CallStats), RetryExhausted> {
    let started = Instant::now();
    let max_attempts = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match call(attempt) {
            Ok(value) => {
                let stats = CallStats {
                    attempts: attempt,
                    latency_ms: started.elapsed().as_millis() as u64,
                };
                return Ok((value, stats));
            }
            Err(error) if error.is_retryable() && attempt < max_attempts => {
                attempt += 1;
                let mut delay = policy.delay_before(attempt);
                if let BackendError::RateLimited {
                    retry_after: Some(hint),
                } = &error
                {
                    delay = delay.max(*hint);
                }
                tracing::warn!(%error, attempt, ?delay, "retrying backend call");
                thread::sleep(delay);
            }
            Err(error) => {
                return Err(RetryExhausted {
                    error,
                    attempts: attempt,
                })
            }
        }
    }
}

/// Replaces every occurrence of each non-empty secret with `[REDACTED]`.
pub fn scrub(text: &str, secrets: &[&str]) -> String {
    let mut out = text.to_string();
    for secret in secrets.iter().filter(|s| !s.is_empty()) {
        out = out.replace(secret, "[REDACTED]");
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Backend(#[from] RetryExhausted),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub struct Generated {
    pub image: ImageRef,
    pub bytes: Vec<u8>,
    pub stats: CallStats,
}

impl fmt::Debug for Generated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generated")
            .field("image", &self.image)
            .field("bytes", &self.bytes.len())
            .field("stats", &self.stats)
            .finish()
    }
}

/// Generates under the retry policy and stores the image content-addressed.
pub fn generate(
    generator: &dyn Generator,
    store: &Store,
    request: &GenerationRequest,
    policy: &RetryPolicy,
) -> Result<Generated, GenerateError> {
    let (image, stats) = with_retry(policy, |_| generator.generate(request))?;
    let entry = store.put_blob(&image.bytes, image.media_type)?;
    Ok(Generated {
        image: ImageRef {
            blob_id: entry.blob_id,
            media_type: image.media_type,
            seed: request.seed,
        },
        bytes: image.bytes,
        stats,
    })
}
