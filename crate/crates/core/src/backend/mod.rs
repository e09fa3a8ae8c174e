//! Uniform chat interface over HTTP model endpoints and deterministic
//! mock agents, plus decision parsing.

mod http;
mod mock;
mod parse;

pub use http::{Gate, HttpRuntime};
pub use mock::{MockBackend, MockBehavior, ScoreRule};
pub use parse::{
    parse_retail, parse_wholesale, ParseError, ParseStatus, RetailDecision, WholesaleDecision,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {backend}: transport failure after {attempts} attempts: {detail}")]
    Transport {
        backend: String,
        attempts: u32,
        detail: String,
    },
    #[error("backend {backend}: wire status {status}: {body}")]
    Status {
        backend: String,
        status: u16,
        body: String,
    },
    #[error("backend {backend}: malformed response body: {detail}")]
    MalformedResponse { backend: String, detail: String },
    #[error("backend {backend}: api key variable {var} is not set")]
    MissingApiKey { backend: String, var: String },
    #[error("mock backend error: {0}")]
    Mock(String),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("model pool must not be empty")]
    EmptyPool,
}

/// Wire-level configuration for one chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_timeout() -> u64 {
    30
}

fn default_retries() -> u32 {
    2
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature < 0.0 {
            return Err(BackendError::InvalidDescriptor(format!(
                "temperature {} below zero",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

pub type Message = (ChatRole, String);

/// Dialogue participant in the wholesale state machine. Lives here because
/// decision parsing is defined over dialogue histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DialogueRole {
    Background,
    Dealer,
    Service,
    Manufacturer,
}

impl std::fmt::Display for DialogueRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DialogueRole::Background => "background",
            DialogueRole::Dealer => "dealer",
            DialogueRole::Service => "service",
            DialogueRole::Manufacturer => "manufacturer",
        };
        write!(f, "{s}")
    }
}

/// One chat backend: a real HTTP endpoint or a deterministic mock.
#[derive(Debug, Clone)]
pub enum Backend {
    Http(HttpRuntime),
    Mock(MockBackend),
}

impl Backend {
    pub fn http(descriptor: BackendDescriptor) -> Result<Backend, BackendError> {
        descriptor.validate()?;
        Ok(Backend::Http(HttpRuntime::new(descriptor, 8)))
    }

    pub fn mock(name: impl Into<String>, behavior: MockBehavior) -> Backend {
        Backend::Mock(MockBackend {
            name: name.into(),
            behavior,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Backend::Http(rt) => &rt.descriptor.name,
            Backend::Mock(m) => &m.name,
        }
    }
}

/// Send an ordered message list and return the generated text.
/// HTTP transport failures are retried up to `max_retries` with
/// exponential backoff (1s/2s/4s). Inputs are never mutated.
pub fn chat(backend: &Backend, messages: &[Message]) -> Result<String, BackendError> {
    match backend {
        Backend::Http(rt) => http::chat_http(rt, messages),
        Backend::Mock(m) => mock::respond(m, messages),
    }
}

/// A non-empty set of interchangeable backends with seeded selection.
#[derive(Debug, Clone)]
pub struct ModelPool {
    backends: Vec<Backend>,
    pub selection_seed: u64,
}

impl ModelPool {
    pub fn new(backends: Vec<Backend>, selection_seed: u64) -> Result<ModelPool, BackendError> {
        if backends.is_empty() {
            return Err(BackendError::EmptyPool);
        }
        Ok(ModelPool {
            backends,
            selection_seed,
        })
    }

    pub fn single(backend: Backend) -> ModelPool {
        ModelPool {
            backends: vec![backend],
            selection_seed: 0,
        }
    }

    pub fn backends(&self) -> &[Backend] {
        &self.backends
    }
}

/// Uniform backend choice, a pure function of (selection_seed, inference_index).
/// Counter-based derivation keeps draws independent across indices.
pub fn select_backend(pool: &ModelPool, inference_index: u64) -> &Backend {
    let mut r = seed::rng(&[pool.selection_seed, 0x6261636b, inference_index]);
    let idx = r.random_range(0..pool.backends.len());
    &pool.backends[idx]
}

/// Per-inference audit line appended to episodes.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeAudit {
    pub inference_index: u64,
    pub backend_name: String,
    pub prompt_hash: String,
    pub response_text: String,
    pub parse_status: String,
}

/// Stable fingerprint of an ordered message list.
pub fn prompt_hash(messages: &[Message]) -> String {
    let mut joined = String::new();
    for (role, text) in messages {
        joined.push_str(role.as_str());
        joined.push('\u{1f}');
        joined.push_str(text);
        joined.push('\u{1e}');
    }
    seed::hash_hex(&joined)
}

/// Average of the numbers parsed from several scalar-task responses;
/// score semantics are the caller's concern.
pub fn average_parsed_scores(responses: &[String]) -> Option<f64> {
    let re = regex::Regex::new(r"-?\d+(?:\.\d+)?").expect("regex");
    let mut values = Vec::new();
    for r in responses {
        let m = re.find(r)?;
        values.push(m.as_str().parse::<f64>().ok()?);
    }
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
