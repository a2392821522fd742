//! Host side of the stdio tool-server protocol.
//!
//! Servers run as child processes and exchange newline-delimited JSON frames
//! over their stdin/stdout (see [`wire`]). The agent talks to tools only
//! through [`ToolHost`], so the same loop drives spawned servers
//! ([`ServerPool`]), in-process services ([`InProcessHost`]) and recorded
//! results ([`ScriptedTools`]).

mod client;
mod pool;
mod scripted;
mod service;
pub mod wire;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::codec::{ToolCall, ToolDescriptor};

pub use client::{LaunchSpec, ServerHandle, ServerState};
pub use pool::ServerPool;
pub use scripted::{ScriptedResult, ScriptedTools};
pub use service::{error_payload, serve, InProcessHost, ToolService};

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("SpawnFailed: {0}")]
    SpawnFailed(String),
    #[error("HandshakeTimeout: no hello within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("handshake failed: {0}")]
    HandshakeFailed(String),
    #[error("TransportClosed: server {0} is not connected")]
    TransportClosed(String),
    #[error("Timeout: no response within {0:?}")]
    Timeout(Duration),
    #[error("WrongServer: call for {found} sent to {expected}")]
    WrongServer { expected: String, found: String },
    #[error("UnknownServer: {0}")]
    UnknownServer(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// One item of a tool result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentItem {
    Text { text: String },
    Image { path: String },
}

/// Normalized outcome of one tool call.
///
/// Tool-level failures (missing file, bad region, unknown tool) are results
/// with `is_error` set, never transport errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolResult {
    pub content: Vec<ContentItem>,
    pub is_error: bool,
    pub elapsed: Duration,
    /// The payload exactly as the server sent it.
    pub raw: Value,
}

impl ToolResult {
    /// Builds a result from a server payload.
    ///
    /// The native shape is `{"is_error": bool, "content": [items]}`. Payloads
    /// without a `content` array (dataset-style objects such as
    /// `{"result_image_path": ..., "boxes": [...]}`) become a single text item
    /// holding the compact JSON, plus image items for every `*_path` field.
    /// `isError` is accepted as an alias of `is_error`.
    pub fn from_payload(raw: Value, elapsed: Duration) -> Self {
        let is_error = raw
            .get("is_error")
            .or_else(|| raw.get("isError"))
            .and_then(Value::as_bool)
            .unwrap_or(false);

        let mut content = Vec::new();
        match raw.get("content") {
            Some(Value::Array(items)) => {
                for item in items {
                    match serde_json::from_value::<ContentItem>(item.clone()) {
                        Ok(parsed) => content.push(parsed),
                        Err(_) => {
                            if let Some(text) = item.get("text").and_then(Value::as_str) {
                                content.push(ContentItem::Text {
                                    text: text.to_string(),
                                });
                            }
                        }
                    }
                }
            }
            _ => {
                if let Value::Object(map) = &raw {
                    let body: Map<String, Value> = map
                        .iter()
                        .filter(|(k, _)| {
                            !matches!(
                                k.as_str(),
                                "is_error" | "isError" | "vlm_response" | "vlm_source" | "origin"
                            )
                        })
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect();
                    if !body.is_empty() {
                        content.push(ContentItem::Text {
                            text: Value::Object(body).to_string(),
                        });
                    }
                    for path in path_fields(map) {
                        content.push(ContentItem::Image { path });
                    }
                } else if !raw.is_null() {
                    content.push(ContentItem::Text {
                        text: raw.to_string(),
                    });
                }
            }
        }
        if is_error
            && !content
                .iter()
                .any(|c| matches!(c, ContentItem::Text { .. }))
        {
            content.push(ContentItem::Text {
                text: "tool reported an error without a message".into(),
            });
        }
        Self {
            content,
            is_error,
            elapsed,
            raw,
        }
    }

    pub fn success(content: Vec<ContentItem>) -> Self {
        let raw = json!({ "is_error": false, "content": content });
        Self::from_payload(raw, Duration::ZERO)
    }

    pub fn error(message: impl Into<String>) -> Self {
        let raw = json!({
            "is_error": true,
            "content": [{"type": "text", "text": message.into()}],
        });
        Self::from_payload(raw, Duration::ZERO)
    }

    /// All text items joined by newlines.
    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|c| match c {
                ContentItem::Text { text } => Some(text.as_str()),
                ContentItem::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_paths(&self) -> Vec<String> {
        let mut paths: Vec<String> = Vec::new();
        for item in &self.content {
            if let ContentItem::Image { path } = item {
                if !paths.contains(path) {
                    paths.push(path.clone());
                }
            }
        }
        paths
    }

    /// Description the server attached itself (`vlm_response`, string or
    /// list of strings).
    pub fn server_description(&self) -> Option<String> {
        match self.raw.get("vlm_response")? {
            Value::String(s) => Some(s.clone()),
            Value::Array(parts) => Some(
                parts
                    .iter()
                    .filter_map(Value::as_str)
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            _ => None,
        }
    }
}

fn path_fields(map: &Map<String, Value>) -> Vec<String> {
    let mut paths = Vec::new();
    for (key, value) in map {
        if !key.ends_with("_path") {
            continue;
        }
        match value {
            Value::String(p) => paths.push(p.clone()),
            Value::Array(items) => {
                paths.extend(items.iter().filter_map(Value::as_str).map(String::from))
            }
            _ => {}
        }
    }
    paths
}

/// Anything the agent can discover tools from and call them on.
pub trait ToolHost: Send + Sync {
    /// Current tool list. Implementations backed by servers re-query them so
    /// server-side changes show up in the next prompt.
    fn tools(&self) -> Result<Vec<ToolDescriptor>, TransportError>;

    fn call(&self, call: &ToolCall) -> Result<ToolResult, TransportError>;
}
