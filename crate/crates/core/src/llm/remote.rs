use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{check_messages, BackendConfig, ChatMessage, LlmBackend, LlmError, WireRecord};
use crate::kb::EmbeddingVector;

/// Chat-completions client (`POST {endpoint}/chat/completions`,
/// `POST {endpoint}/embeddings`).
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    embedding_model: String,
    temperature: f64,
    max_tokens: u32,
    api_key: String,
    wire_log: Option<Mutex<Vec<WireRecord>>>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            LlmError::Validation(format!(
                "credential variable {} is not set",
                config.api_key_env
            ))
        })?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: &BackendConfig, api_key: String) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Validation("remote backend requires an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: config.model.clone(),
            embedding_model: config.embedding_model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            api_key,
            wire_log: config.verbose.then(|| Mutex::new(Vec::new())),
        })
    }

    fn post(&self, route: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{}", self.endpoint, route);
        let request = body.to_string();
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(request.as_str())
            .map_err(|e| LlmError::backend(format!("transport failure for {url}: {e}")))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::backend(format!("cannot read response body: {e}")))?;
        if let Some(log) = &self.wire_log {
            log.lock().expect("wire log").push(WireRecord {
                url: url.clone(),
                request,
                response: text.clone(),
            });
        }
        if !(200..300).contains(&status) {
            return Err(LlmError::Backend {
                message: format!("{url} returned status {status}"),
                retry_after,
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| LlmError::backend(format!("malformed response from {url}: {e}")))
    }
}

impl LlmBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.embedding_model)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        check_messages(messages)?;
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let v = self.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::backend("response has no choices[0].message.content"))
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::Validation("cannot embed empty text".into()));
        }
        let body = json!({ "model": self.embedding_model, "input": text });
        let v = self.post("embeddings", &body)?;
        let values: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::backend("response has no data[0].embedding"))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| LlmError::backend("non-numeric embedding"))
            })
            .collect::<Result<_, _>>()?;
        EmbeddingVector::new(values).map_err(|e| LlmError::backend(e.to_string()))
    }

    fn drain_wire_log(&self) -> Vec<WireRecord> {
        match &self.wire_log {
            Some(log) => std::mem::take(&mut *log.lock().expect("wire log")),
            None => Vec::new(),
        }
    }
}
