//! Wire format of the stdio tool protocol.
//!
//! Every message is one UTF-8 JSON object on its own line:
//!
//! ```text
//! {"id":<u64|null>,"kind":"hello"|"list_tools"|"call_tool"|"result","payload":{...}}
//! ```
//!
//! Keys are emitted in the order `id`, `kind`, `payload`; newlines inside
//! strings are escaped by the JSON encoder, so a frame never spans lines.
//!
//! * `hello` (client → server), payload `{"protocol_version": 1}`; the server
//!   answers with a `hello` frame carrying the same id and
//!   `{"protocol_version": 1, "tools": [tool, ...]}`.
//! * `list_tools`, payload `{}`; answered by `result` with `{"tools": [...]}`.
//! * `call_tool`, payload `{"tool_name": s, "arguments": {...}}`; answered by
//!   `result` with `{"is_error": bool, "content": [item, ...]}` and an
//!   optional `"vlm_response"` string.
//! * A frame the server cannot decode is answered by a `result` with
//!   `"id": null` and `is_error: true`; the connection stays open.
//!
//! A tool entry is `{"name", "description", "input_schema", "category"}`
//! where category is `"vision"` or `"text"`. Content items are
//! `{"type": "text", "text": s}` or `{"type": "image", "path": s}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{CodecError, ToolCategory, ToolDescriptor};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    ListTools,
    CallTool,
    Result,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub id: Option<u64>,
    pub kind: Kind,
    #[serde(default)]
    pub payload: Value,
}

impl Frame {
    pub fn new(id: Option<u64>, kind: Kind, payload: Value) -> Self {
        Self { id, kind, payload }
    }

    /// Encodes the frame as one line, including the trailing `\n`.
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("frames always serialize");
        line.push('\n');
        line
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
    }
}

/// Tool entry as advertised on the wire; the server name comes from the
/// client's launch configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTool {
    pub name: String,
    pub description: String,
    pub input_schema: Value,
    pub category: ToolCategory,
}

impl WireTool {
    pub fn into_descriptor(self, server_name: &str) -> Result<ToolDescriptor, CodecError> {
        ToolDescriptor::new(
            server_name,
            self.name,
            self.description,
            self.input_schema,
            self.category,
        )
    }

    pub fn from_descriptor(tool: &ToolDescriptor) -> Self {
        Self {
            name: tool.tool_name.clone(),
            description: tool.description.clone(),
            input_schema: tool.input_schema.clone(),
            category: tool.category,
        }
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn line_shape_is_stable() {
        let frame = Frame::new(
            Some(3),
            Kind::CallTool,
            json!({"tool_name": "image_crop", "arguments": {"note": "a\nb"}}),
        );
        let line = frame.to_line();
        assert_eq!(
            line,
            "{\"id\":3,\"kind\":\"call_tool\",\"payload\":{\"tool_name\":\"image_crop\",\"arguments\":{\"note\":\"a\\nb\"}}}\n"
        );
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(Frame::parse(&line).unwrap(), frame);
    }

    #[test]
    fn null_id_frames_parse() {
        let frame =
            Frame::parse(r#"{"id":null,"kind":"result","payload":{"is_error":true}}"#).unwrap();
        assert_eq!(frame.id, None);
        assert_eq!(frame.kind, Kind::Result);
    }
}
