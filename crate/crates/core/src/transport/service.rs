use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Map, Value};

use super::wire::{Frame, Kind, WireTool, PROTOCOL_VERSION};
use super::{ToolHost, ToolResult, TransportError};
use crate::codec::{ToolCall, ToolDescriptor};

/// Server-side implementation of a set of tools.
pub trait ToolService: Send + Sync {
    fn tools(&self) -> Vec<WireTool>;

    /// Returns the result payload. Tool failures are payloads with
    /// `is_error: true`, never panics.
    fn call(&self, tool_name: &str, arguments: &Map<String, Value>) -> Value;
}

/// Error payload in the native result shape.
pub fn error_payload(message: impl Into<String>) -> Value {
    json!({
        "is_error": true,
        "content": [{"type": "text", "text": message.into()}],
    })
}

/// Runs the server side of the stdio protocol until `input` reaches EOF.
pub fn serve(
    service: &dyn ToolService,
    input: impl BufRead,
    mut output: impl Write,
) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Frame::parse(&line) {
            Err(err) => Frame::new(
                None,
                Kind::Result,
                error_payload(format!("malformed frame: {err}")),
            ),
            Ok(frame) => respond(service, frame),
        };
        output.write_all(reply.to_line().as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

fn respond(service: &dyn ToolService, frame: Frame) -> Frame {
    let payload = match frame.kind {
        Kind::Hello => {
            return Frame::new(
                frame.id,
                Kind::Hello,
                json!({ "protocol_version": PROTOCOL_VERSION, "tools": service.tools() }),
            )
        }
        Kind::ListTools => json!({ "tools": service.tools() }),
        Kind::CallTool => {
            let name = frame.payload.get("tool_name").and_then(Value::as_str);
            let arguments = frame.payload.get("arguments").and_then(Value::as_object);
            match (name, arguments) {
                (Some(name), Some(arguments)) => service.call(name, arguments),
                (Some(name), None) if frame.payload.get("arguments").is_none() => {
                    service.call(name, &Map::new())
                }
                _ => error_payload("call_tool needs a tool_name string and an arguments object"),
            }
        }
        Kind::Result => error_payload("servers do not accept result frames"),
    };
    Frame::new(frame.id, Kind::Result, payload)
}

/// Tool host backed by services running in this process.
#[derive(Default, Clone)]
pub struct InProcessHost {
    services: BTreeMap<String, Arc<dyn ToolService>>,
}

impl std::fmt::Debug for InProcessHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InProcessHost")
            .field("servers", &self.services.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl InProcessHost {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_server(mut self, name: impl Into<String>, service: Arc<dyn ToolService>) -> Self {
        self.services.insert(name.into(), service);
        self
    }
}

impl ToolHost for InProcessHost {
    fn tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        let mut tools = Vec::new();
        for (server, service) in &self.services {
            for tool in service.tools() {
                tools.push(
                    tool.into_descriptor(server)
                        .map_err(|err| TransportError::Protocol(err.to_string()))?,
                );
            }
        }
        Ok(tools)
    }

    fn call(&self, call: &ToolCall) -> Result<ToolResult, TransportError> {
        let service = self
            .services
            .get(&call.server_name)
            .ok_or_else(|| TransportError::UnknownServer(call.server_name.clone()))?;
        let started = Instant::now();
        let payload = service.call(&call.tool_name, &call.arguments);
        Ok(ToolResult::from_payload(payload, started.elapsed()))
    }
}
