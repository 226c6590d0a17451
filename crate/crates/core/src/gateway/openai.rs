//! OpenAI-style `chat/completions` over HTTP.

use std::sync::OnceLock;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, CompletionRequest, GatewayError};

pub struct OpenAiBackend {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    // built lazily: the blocking client must not be created on an async runtime thread
    client: OnceLock<reqwest::blocking::Client>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiBackend {
    /// `endpoint` is the full chat-completions URL.
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        OpenAiBackend {
            endpoint: endpoint.into(),
            api_key,
            timeout,
            client: OnceLock::new(),
        }
    }

    /// Reads the key from the named environment variable.
    pub fn from_env(endpoint: impl Into<String>, key_var: &str, timeout: Duration) -> Self {
        Self::new(endpoint, std::env::var(key_var).ok(), timeout)
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, GatewayError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let built = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| GatewayError::Provider {
                message: e.to_string(),
                transient: false,
            })?;
        Ok(self.client.get_or_init(|| built))
    }

    pub fn request_body(request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model_tag,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Backend for OpenAiBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut call = self
            .client()?
            .post(&self.endpoint)
            .json(&Self::request_body(request));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key).header("api-key", key);
        }
        let response = call.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Provider {
                    message: e.to_string(),
                    transient: e.is_connect() || e.is_request(),
                }
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(GatewayError::Provider {
                message: format!("HTTP {status}: {body}"),
                transient: status.as_u16() == 429 || status.is_server_error(),
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| GatewayError::Provider {
            message: format!("malformed response: {e}"),
            transient: false,
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Provider {
                message: "response has no message content".into(),
                transient: false,
            })
    }
}
