use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    estimate_tokens, Backend, BackendRole, GatewayError, ModelTurn, PromptBundle, Role, Turn,
};

const BODY_EXCERPT: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    120_000
}

/// Generic JSON chat-completions client.
///
/// Sends `{"model", "temperature", "messages"}` and reads
/// `choices[0].message.content` plus `usage` when present. Images attached to
/// a turn are inlined as base64 data URLs. Tool turns are sent with the
/// `user` role since plain chat endpoints reject `tool` messages without a
/// call id.
#[derive(Debug)]
pub struct HttpChat {
    id: String,
    config: HttpChatConfig,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(config: HttpChatConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self {
            id: format!("http_chat:{}", config.model),
            config,
            agent,
        }
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Result<Value, GatewayError> {
        let messages = bundle
            .turns
            .iter()
            .map(message)
            .collect::<Result<Vec<_>, _>>()?;
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        if let Some(max_tokens) = self.config.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        Ok(body)
    }
}

fn message(turn: &Turn) -> Result<Value, GatewayError> {
    let role = match turn.role {
        Role::Tool => "user",
        other => other.as_str(),
    };
    if turn.images.is_empty() {
        return Ok(json!({ "role": role, "content": turn.content }));
    }
    let mut parts = vec![json!({ "type": "text", "text": turn.content })];
    for image in &turn.images {
        parts.push(json!({ "type": "image_url", "image_url": { "url": data_url(image)? } }));
    }
    Ok(json!({ "role": role, "content": parts }))
}

fn data_url(path: &str) -> Result<String, GatewayError> {
    let bytes = std::fs::read(path).map_err(|_| GatewayError::MissingImage(path.to_string()))?;
    let mime = match Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("tif") | Some("tiff") => "image/tiff",
        _ => "application/octet-stream",
    };
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{encoded}"))
}

fn excerpt(body: &str) -> String {
    body.chars().take(BODY_EXCERPT).collect()
}

impl Backend for HttpChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(
        &self,
        _role: BackendRole,
        bundle: &PromptBundle,
    ) -> Result<ModelTurn, GatewayError> {
        let body = self.request_body(bundle)?;
        let mut request = self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json");
        if let Some(var) = &self.config.api_key_env {
            let token = std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("environment variable {var} is not set"))
            })?;
            request = request.set("Authorization", &format!("Bearer {token}"));
        }

        let started = Instant::now();
        let response = match request.send_json(body) {
            Ok(response) => response,
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                return Err(GatewayError::EndpointError {
                    status,
                    body: excerpt(&body),
                });
            }
            Err(ureq::Error::Transport(err)) => {
                let text = err.to_string();
                if text.contains("timed out") {
                    return Err(GatewayError::Timeout(Duration::from_millis(
                        self.config.timeout_ms,
                    )));
                }
                return Err(GatewayError::Request(text));
            }
        };
        let latency = started.elapsed();
        let status = response.status();
        let raw = response
            .into_string()
            .map_err(|err| GatewayError::Request(err.to_string()))?;
        let parsed: Value =
            serde_json::from_str(&raw).map_err(|_| GatewayError::EndpointError {
                status,
                body: excerpt(&raw),
            })?;
        let text = parsed
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::EndpointError {
                status,
                body: excerpt(&raw),
            })?
            .to_string();
        let usage = |key: &str| {
            parsed
                .get("usage")
                .and_then(|u| u.get(key))
                .and_then(Value::as_u64)
                .map(|n| n as usize)
        };
        Ok(ModelTurn {
            prompt_tokens: usage("prompt_tokens").unwrap_or_else(|| bundle.prompt_tokens()),
            completion_tokens: usage("completion_tokens").unwrap_or_else(|| estimate_tokens(&text)),
            text,
            latency,
            backend_id: self.id.clone(),
        })
    }
}
