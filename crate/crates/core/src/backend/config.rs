//! Backend configuration file and the id → backend registry.
//!
//! ```toml
//! [backends.dalle3]
//! role = "generator"
//! class = "api"
//! endpoint = "https://api.openai.com/v1"
//! model = "dall-e-3"
//! in_flight = 2
//!
//! [backends.gpt4o]
//! role = "critic"
//! class = "api"
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4o"
//! ```
//!
//! Credentials never live in the file: the key for backend `dalle3` is read
//! from `TIR_DALLE3_API_KEY`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{OpenAiChatCritic, OpenAiImageGenerator};
use super::{BackendClass, BackendDescriptor, Critic, Generator, Throttled, TokenBucket};
use crate::sim::{ErrorModel, SimCritic, SimGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub role: Role,
    pub class: BackendClass,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub steps: Option<u32>,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default)]
    pub rate_per_second: Option<f64>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendsFile {
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("backend `{id}`: {message}")]
    Invalid { id: String, message: String },
}

impl BackendsFile {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }
}

/// Environment variable holding the key for backend `id`.
pub fn api_key_var(id: &str) -> String {
    let upper: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("TIR_{upper}_API_KEY")
}

#[derive(Clone, Default)]
pub struct BackendRegistry {
    generators: BTreeMap<String, Arc<dyn Generator>>,
    critics: BTreeMap<String, Arc<dyn Critic>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `sim` (generator and critic) and `sim-zero` (a generator
    /// that never errs).
    pub fn with_sim(error_model: ErrorModel) -> Self {
        let mut reg = Self::new();
        reg.add_generator("sim", Arc::new(SimGenerator::new("sim", error_model)));
        reg.add_generator("sim-zero", Arc::new(SimGenerator::new("sim-zero", ErrorModel::zero())));
        reg.add_critic("sim", Arc::new(SimCritic::new("sim")));
        reg
    }

    pub fn add_generator(&mut self, id: &str, g: Arc<dyn Generator>) {
        self.generators.insert(id.to_string(), g);
    }

    pub fn add_critic(&mut self, id: &str, c: Arc<dyn Critic>) {
        self.critics.insert(id.to_string(), c);
    }

    pub fn generator(&self, id: &str) -> Option<Arc<dyn Generator>> {
        self.generators.get(id).cloned()
    }

    pub fn critic(&self, id: &str) -> Option<Arc<dyn Critic>> {
        self.critics.get(id).cloned()
    }

    pub fn generator_ids(&self) -> Vec<&str> {
        self.generators.keys().map(String::as_str).collect()
    }

    pub fn critic_ids(&self) -> Vec<&str> {
        self.critics.keys().map(String::as_str).collect()
    }

    /// Adds every HTTP backend declared in `file`, each behind its own
    /// in-flight cap. `key_lookup` resolves environment variables.
    pub fn add_file(
        &mut self,
        file: &BackendsFile,
        key_lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        for (id, spec) in &file.backends {
            if spec.class == BackendClass::Sim {
                return Err(ConfigError::Invalid {
                    id: id.clone(),
                    message: "sim backends are built in".into(),
                });
            }
            if spec.endpoint.is_empty() {
                return Err(ConfigError::Invalid {
                    id: id.clone(),
                    message: "missing endpoint".into(),
                });
            }
            let mut descriptor = BackendDescriptor::new(id.clone(), spec.class, spec.model.clone());
            if let Some(steps) = spec.steps {
                descriptor.default_steps = steps.max(1);
            }
            descriptor.max_in_flight = spec.in_flight.max(1);
            let key = key_lookup(&api_key_var(id));
            let timeout = Duration::from_millis(spec.timeout_ms);
            let bucket = spec.rate_per_second.map(|r| Arc::new(TokenBucket::new(1, r)));
            let cap = descriptor.max_in_flight;
            match spec.role {
                Role::Generator => {
                    let inner = Arc::new(OpenAiImageGenerator::new(descriptor, &spec.endpoint, key, timeout));
                    self.add_generator(id, Arc::new(Throttled::new(inner, cap, bucket)));
                }
                Role::Critic => {
                    let inner = Arc::new(OpenAiChatCritic::new(descriptor, &spec.endpoint, key, timeout));
                    self.add_critic(id, Arc::new(Throttled::new(inner, cap, bucket)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_var_names() {
        assert_eq!(api_key_var("dalle3"), "TIR_DALLE3_API_KEY");
        assert_eq!(api_key_var("gpt-4o"), "TIR_GPT_4O_API_KEY");
    }

    #[test]
    fn loads_toml_and_registers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backends.toml");
        std::fs::write(
            &path,
            r#"
[backends.flux]
role = "generator"
class = "rectified-flow"
endpoint = "http://127.0.0.1:9"
model = "flux.1-dev"

[backends.sd15]
role = "generator"
class = "diffusion"
endpoint = "http://127.0.0.1:9"
model = "sd-1.5"
in_flight = 1

[backends.gpt4o]
role = "critic"
class = "api"
endpoint = "http://127.0.0.1:9"
model = "gpt-4o"
"#,
        )
        .unwrap();
        let file = BackendsFile::load(&path).unwrap();
        let mut reg = BackendRegistry::with_sim(ErrorModel::zero());
        reg.add_file(&file, |_| None).unwrap();
        assert_eq!(reg.generator("flux").unwrap().descriptor().default_steps, 50);
        assert_eq!(reg.generator("sd15").unwrap().descriptor().default_steps, 100);
        assert_eq!(reg.generator("sd15").unwrap().descriptor().max_in_flight, 1);
        assert!(reg.critic("gpt4o").is_some());
        assert!(reg.generator("gpt4o").is_none());
        assert_eq!(reg.generator_ids(), vec!["flux", "sd15", "sim", "sim-zero"]);
    }

    #[test]
    fn rejects_missing_endpoint() {
        let file: BackendsFile =
            serde_json::from_str(r#"{"backends":{"x":{"role":"critic","class":"api"}}}"#).unwrap();
        let err = BackendRegistry::new().add_file(&file, |_| None).unwrap_err();
        assert!(err.to_string().contains("missing endpoint"));
    }
}
