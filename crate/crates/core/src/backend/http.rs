//! Adapters for OpenAI-compatible HTTP endpoints.
//!
//! Generation posts to `{endpoint}/images/generations`:
//!
//! ```json
//! {"model": "...", "prompt": "...", "n": 1, "size": "1024x1024",
//!  "response_format": "b64_json", "seed": 7, "steps": 50}
//! ```
//!
//! and reads `data[0].b64_json`. Critique posts to
//! `{endpoint}/chat/completions` with one user message holding a `text` part
//! (the instruction) and an `image_url` part (a base64 data URL), and reads
//! `choices[0].message.content`. A re-ask appends the previous answer as an
//! assistant turn and the note as a second user turn.
//!
//! Status mapping: 401/403 are auth failures, 408 a timeout, 429 a rate
//! limit (honoring `Retry-After` seconds), 5xx and connection errors are
//! unavailability. Other statuses are terminal.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{
    scrub, BackendDescriptor, BackendError, Critic, CritiqueRequest, GeneratedImage,
    GenerationRequest, Generator, MediaType,
};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::new_with_config(
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build(),
    )
}

struct Endpoint {
    base: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl Endpoint {
    fn new(base: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            agent: agent(timeout),
        }
    }

    fn scrub(&self, text: &str) -> String {
        match &self.api_key {
            Some(key) => scrub(text, &[key]),
            None => text.to_string(),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut request = self.agent.post(format!("{}{}", self.base, path));
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| self.transport_error(e))?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| BackendError::Failure(format!("response is not JSON: {e}"))),
            401 | 403 => Err(BackendError::AuthFailure { status }),
            408 => Err(BackendError::Timeout),
            429 => Err(BackendError::RateLimited { retry_after }),
            500..=599 => Err(BackendError::Unavailable { status }),
            _ => Err(BackendError::Failure(format!(
                "status {status}: {}",
                self.scrub(&text)
            ))),
        }
    }

    fn transport_error(&self, error: ureq::Error) -> BackendError {
        match error {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                BackendError::Unavailable { status: 0 }
            }
            other => BackendError::Failure(self.scrub(&other.to_string())),
        }
    }
}

pub struct OpenAiImageGenerator {
    descriptor: BackendDescriptor,
    endpoint: Endpoint,
}

impl OpenAiImageGenerator {
    pub fn new(descriptor: BackendDescriptor, base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            descriptor,
            endpoint: Endpoint::new(base_url, api_key, timeout),
        }
    }
}

impl Generator for OpenAiImageGenerator {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage, BackendError> {
        let body = json!({
            "model": self.descriptor.model,
            "prompt": request.prompt.as_str(),
            "n": 1,
            "size": format!("{}x{}", request.width, request.height),
            "response_format": "b64_json",
            "seed": request.seed,
            "steps": request.steps,
        });
        let value = self.endpoint.post("/images/generations", &body)?;
        let encoded = value
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Failure("response lacks data[0].b64_json".into()))?;
        let bytes = BASE64
            .decode(encoded.trim())
            .map_err(|e| BackendError::Failure(format!("bad base64 image: {e}")))?;
        let media_type = MediaType::sniff(&bytes).unwrap_or(MediaType::Png);
        Ok(GeneratedImage { bytes, media_type })
    }
}

pub struct OpenAiChatCritic {
    descriptor: BackendDescriptor,
    endpoint: Endpoint,
}

impl OpenAiChatCritic {
    pub fn new(descriptor: BackendDescriptor, base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            descriptor,
            endpoint: Endpoint::new(base_url, api_key, timeout),
        }
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &CritiqueRequest, image: &[u8]) -> Value {
        let data_url = format!(
            "data:{};base64,{}",
            request.image.media_type.mime(),
            BASE64.encode(image)
        );
        let mut messages = vec![json!({
            "role": "user",
            "content": [
                {"type": "text", "text": request.instruction},
                {"type": "image_url", "image_url": {"url": data_url}},
            ],
        })];
        if let Some(reask) = &request.reask {
            messages.push(json!({"role": "assistant", "content": reask.previous_response}));
            messages.push(json!({"role": "user", "content": reask.note}));
        }
        json!({ "model": request.model_id, "messages": messages })
    }
}

impl Critic for OpenAiChatCritic {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn critique(&self, request: &CritiqueRequest, image: &[u8]) -> Result<String, BackendError> {
        let value = self
            .endpoint
            .post("/chat/completions", &self.request_body(request, image))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Failure("response lacks choices[0].message.content".into()))?;
        Ok(self.endpoint.scrub(content))
    }
}
