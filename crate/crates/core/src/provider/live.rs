//! HTTP adapter for messages-style completion APIs.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionAdapter, ModelRequest, ModelResponse, ProviderError, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub endpoint: String,
    /// Header carrying the key. `authorization` sends `Bearer <key>`.
    pub auth_header: String,
    /// Name of the environment variable holding the key. Keys are never
    /// read from config files or flags.
    pub api_key_env: String,
    pub extra_headers: BTreeMap<String, String>,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: "https://api.anthropic.com/v1/messages".into(),
            auth_header: "x-api-key".into(),
            api_key_env: "GENAI_API_KEY".into(),
            extra_headers: [("anthropic-version".to_string(), "2023-06-01".to_string())]
                .into_iter()
                .collect(),
            timeout_secs: 120,
        }
    }
}

impl LiveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(format!("live.endpoint must be an http(s) URL, got {:?}", self.endpoint));
        }
        if self.auth_header.trim().is_empty() || self.api_key_env.trim().is_empty() {
            return Err("live.auth_header and live.api_key_env must be set".into());
        }
        if self.timeout_secs == 0 {
            return Err("live.timeout_secs must be positive".into());
        }
        Ok(())
    }
}

pub struct LiveAdapter {
    config: LiveConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for LiveAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveAdapter").field("endpoint", &self.config.endpoint).finish()
    }
}

impl LiveAdapter {
    /// Reads the key from the configured environment variable.
    pub fn from_env(config: LiveConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            ProviderError::AuthError(format!("environment variable {} is not set", config.api_key_env))
        })?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: LiveConfig, api_key: String) -> Result<Self, ProviderError> {
        config.validate().map_err(ProviderError::InvalidRequest)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(LiveAdapter {
            config,
            api_key,
            client,
        })
    }
}

pub fn request_body(request: &ModelRequest) -> Value {
    json!({
        "model": request.model_id,
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
        "messages": [{"role": "user", "content": request.prompt}],
    })
}

/// Accepts messages-style bodies (`content[].text`, `usage.input_tokens`)
/// and chat-completions-style bodies (`choices[0].message.content`,
/// `usage.prompt_tokens`).
pub fn parse_response_body(body: &Value) -> Result<ModelResponse, ProviderError> {
    let invalid = |m: &str| ProviderError::InvalidResponse(m.to_string());
    let usage = body.get("usage");
    let count = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| usage.and_then(|u| u.get(*k)).and_then(Value::as_u64))
            .unwrap_or(0)
    };
    if let Some(content) = body.get("content").and_then(Value::as_array) {
        let text: String = content
            .iter()
            .filter(|c| c.get("type").and_then(Value::as_str).unwrap_or("text") == "text")
            .filter_map(|c| c.get("text").and_then(Value::as_str))
            .collect();
        let stop_reason = match body.get("stop_reason").and_then(Value::as_str) {
            Some("end_turn") | Some("stop_sequence") | None => StopReason::Complete,
            Some("max_tokens") => StopReason::Length,
            Some(_) => StopReason::Error,
        };
        return Ok(ModelResponse {
            text,
            input_tokens: count(&["input_tokens"]),
            output_tokens: count(&["output_tokens"]),
            stop_reason,
        });
    }
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| invalid("body has neither content nor choices"))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| invalid("choice without message content"))?
        .to_string();
    let stop_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => StopReason::Complete,
        Some("length") => StopReason::Length,
        Some(_) => StopReason::Error,
    };
    Ok(ModelResponse {
        text,
        input_tokens: count(&["prompt_tokens", "input_tokens"]),
        output_tokens: count(&["completion_tokens", "output_tokens"]),
        stop_reason,
    })
}

fn status_error(status: u16, body: String) -> ProviderError {
    match status {
        429 => ProviderError::RateLimited,
        408 | 504 => ProviderError::Timeout,
        401 | 403 => ProviderError::AuthError(format!("HTTP {status}")),
        500..=599 => ProviderError::ServerError(format!("HTTP {status}: {body}")),
        _ => ProviderError::InvalidRequest(format!("HTTP {status}: {body}")),
    }
}

impl CompletionAdapter for LiveAdapter {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let key_value = if self.config.auth_header.eq_ignore_ascii_case("authorization") {
            format!("Bearer {}", self.api_key)
        } else {
            self.api_key.clone()
        };
        let mut builder = self
            .client
            .post(&self.config.endpoint)
            .header(self.config.auth_header.as_str(), key_value)
            .json(&request_body(request));
        for (k, v) in &self.config.extra_headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(status_error(status, text));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidResponse(format!("body is not JSON: {e}")))?;
        parse_response_body(&body)
    }
}
