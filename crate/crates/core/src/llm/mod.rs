//! Text generation and embedding backends.
//!
//! Every prompt built by the agents goes through an [`LlmBackend`]. Two
//! implementations ship: [`ScriptedBackend`], a deterministic replay of
//! authored responses used by tests and golden episodes, and
//! [`RemoteBackend`], which speaks the common chat-completions wire shape.

mod embedding;
mod remote;
mod scripted;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::EmbeddingVector;

pub use embedding::{hash_embedding, HASH_EMBEDDING_DIM};
pub use remote::RemoteBackend;
pub use scripted::{Script, ScriptEntry, ScriptedBackend};

/// Default environment variable holding the remote credential.
pub const DEFAULT_API_KEY_ENV: &str = "SOPFLOW_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if matches!(self.role, Role::System | Role::User) && self.content.trim().is_empty() {
            return Err(LlmError::Validation(format!(
                "{} message content must not be empty",
                self.role
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend error: {message}")]
    Backend {
        message: String,
        retry_after: Option<Duration>,
    },
    #[error("script exhausted: no entry matches prompt starting with {prompt_head:?}")]
    ScriptExhausted { prompt_head: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl LlmError {
    pub fn backend(message: impl Into<String>) -> Self {
        LlmError::Backend {
            message: message.into(),
            retry_after: None,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Backend { .. })
    }
}

/// Longest pause taken on a server's retry-after hint.
pub const MAX_RETRY_WAIT: Duration = Duration::from_secs(30);

/// Calls `f`, and once more after a retryable failure, first waiting out
/// any retry-after hint (capped at [`MAX_RETRY_WAIT`]).
pub fn retry_once<T>(
    mut f: impl FnMut() -> Result<T, LlmError>,
    on_retry: impl FnOnce(&LlmError),
) -> Result<T, LlmError> {
    match f() {
        Err(e) if e.is_retryable() => {
            on_retry(&e);
            if let LlmError::Backend {
                retry_after: Some(wait),
                ..
            } = &e
            {
                std::thread::sleep((*wait).min(MAX_RETRY_WAIT));
            }
            f()
        }
        r => r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Scripted,
}

/// Backend selection and sampling parameters.
///
/// The scripted backend ignores `temperature` and `max_tokens`. The remote
/// backend requires `endpoint` and reads its credential from the environment
/// variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key_env: String,
    /// Record raw request/response bodies for the transcript.
    pub verbose: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model: "gpt-4-turbo".to_string(),
            embedding_model: "text-embedding-3-small".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            verbose: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(LlmError::Validation(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Validation("max_tokens must be positive".into()));
        }
        if self.kind == BackendKind::Remote {
            match &self.endpoint {
                Some(e) if !e.trim().is_empty() => {}
                _ => {
                    return Err(LlmError::Validation(
                        "remote backend requires an endpoint".into(),
                    ))
                }
            }
            if self.api_key_env.trim().is_empty() {
                return Err(LlmError::Validation(
                    "remote backend requires a credential variable name".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One raw exchange with a remote endpoint, kept when verbose logging is on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRecord {
    pub url: String,
    pub request: String,
    pub response: String,
}

pub trait LlmBackend: Send + Sync {
    /// Stable identifier, used to key the embedding cache.
    fn id(&self) -> String;

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError>;

    /// Raw wire exchanges recorded since the last call. Empty unless the
    /// backend was configured verbose.
    fn drain_wire_log(&self) -> Vec<WireRecord> {
        Vec::new()
    }
}

pub(crate) fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    if messages.is_empty() {
        return Err(LlmError::Validation("messages must not be empty".into()));
    }
    messages.iter().try_for_each(ChatMessage::validate)
}

/// Builds a backend from configuration. `script` is required for the
/// scripted kind.
pub fn build_backend(
    config: &BackendConfig,
    script: Option<Script>,
) -> Result<Box<dyn LlmBackend>, LlmError> {
    config.validate()?;
    match config.kind {
        BackendKind::Scripted => Ok(Box::new(ScriptedBackend::new(script.unwrap_or_default()))),
        BackendKind::Remote => Ok(Box::new(RemoteBackend::from_config(config)?)),
    }
}
